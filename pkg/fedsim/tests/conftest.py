import json

import pandas as pd
import pytest

from fedsim import harness

# Attack rows per name in the toy CICIoT2023 file. Every category is present
# and DDoS, DoS and Recon hold unequal attack counts so balancing has work to do.
TOY_ATTACKS = {
    "DDoS-SYN_Flood": 30,
    "DDoS-ICMP_Flood": 12,
    "DoS-UDP_Flood": 15,
    "DoS-HTTP_Flood": 10,
    "Recon-PortScan": 10,
    "Recon-OSScan": 20,
    "SqlInjection": 10,
    "DictionaryBruteForce": 10,
    "DNS_Spoofing": 10,
    "Mirai-udpplain": 10,
    "BenignTraffic": 21,
}


@pytest.fixture(autouse=True)
def disable_logging(mocker):
    mocker.patch("fedsim.management.commands.fedsim._setup_logging", autospec=True)


@pytest.fixture
def ciciot_csv(tmp_path):
    """A small CICIoT2023-style CSV with two features and one malformed row"""
    rows = []
    for index, (attack, count) in enumerate(TOY_ATTACKS.items()):
        for i in range(count):
            rows.append({"flow_duration": index + 0.01 * i, "rate": i % 5, "label": attack})

    rows.append({"flow_duration": "NaN", "rate": 1, "label": "DDoS-SYN_Flood"})
    path = tmp_path / "ciciot.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


@pytest.fixture
def synth_config(tmp_path):
    """A synthetic experiment small enough to run in well under a second"""
    return harness.ExperimentConfig(
        synth=harness.SynthSpec(classes=4, per_class=30, dims=4, separation=6.0),
        partition="iid",
        clients=3,
        rounds=3,
        epochs=1,
        batch_size=16,
        lr0=0.1,
        hidden=(8,),
        seed=7,
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def config_file(tmp_path, synth_config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(synth_config.to_dict()))
    return path
