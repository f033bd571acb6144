"""
The CICIoT2023 label taxonomy and the class maps built from it.

Every raw label in the published CSVs is one of 33 attack names or
`BenignTraffic`. Attacks group into seven categories; benign traffic is the
eighth class.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, Tuple

BENIGN = "BenignTraffic"

BINARY = "binary"
CATEGORIES8 = "categories8"
ATTACKS34 = "attacks34"
GRANULARITIES = (BINARY, CATEGORIES8, ATTACKS34)

# The seven attack categories, in client order for non-IID partitioning
ATTACK_CATEGORIES = (
    "DDoS",
    "DoS",
    "Recon",
    "Web-based",
    "Brute Force",
    "Spoofing",
    "Mirai",
)

TAXONOMY: Dict[str, Tuple[str, ...]] = {
    "DDoS": (
        "DDoS-RSTFINFlood",
        "DDoS-PSHACK_Flood",
        "DDoS-SYN_Flood",
        "DDoS-UDP_Flood",
        "DDoS-TCP_Flood",
        "DDoS-ICMP_Flood",
        "DDoS-SynonymousIP_Flood",
        "DDoS-ACK_Fragmentation",
        "DDoS-UDP_Fragmentation",
        "DDoS-ICMP_Fragmentation",
        "DDoS-SlowLoris",
        "DDoS-HTTP_Flood",
    ),
    "DoS": (
        "DoS-UDP_Flood",
        "DoS-SYN_Flood",
        "DoS-TCP_Flood",
        "DoS-HTTP_Flood",
    ),
    "Recon": (
        "Recon-HostDiscovery",
        "Recon-OSScan",
        "Recon-PortScan",
        "Recon-PingSweep",
        "VulnerabilityScan",
    ),
    "Web-based": (
        "SqlInjection",
        "CommandInjection",
        "XSS",
        "Uploading_Attack",
        "Backdoor_Malware",
        "BrowserHijacking",
    ),
    "Brute Force": ("DictionaryBruteForce",),
    "Spoofing": (
        "MITM-ArpSpoofing",
        "DNS_Spoofing",
    ),
    "Mirai": (
        "Mirai-greeth_flood",
        "Mirai-greip_flood",
        "Mirai-udpplain",
    ),
}

# TCP and UDP floods are listed under both DDoS and DoS. A label without the
# DDoS-/DoS- prefix resolves to DDoS.
ALIASES = {
    "TCP_Flood": "DDoS-TCP_Flood",
    "UDP_Flood": "DDoS-UDP_Flood",
    "TCP Flood": "DDoS-TCP_Flood",
    "UDP Flood": "DDoS-UDP_Flood",
}

ATTACKS = tuple(attack for attacks in TAXONOMY.values() for attack in attacks)

_CATEGORY_OF = {
    attack: category for category, attacks in TAXONOMY.items() for attack in attacks
}


def canonical(name: str) -> str:
    """Resolve aliases to the canonical attack name"""
    return ALIASES.get(name.strip(), name.strip())


def is_benign(name: str) -> bool:
    return canonical(name).lower() in (BENIGN.lower(), "benign")


def category_of(name: str) -> str | None:
    """
    The category an attack belongs to, "Benign" for benign traffic,
    or None for a name outside the taxonomy
    """
    if is_benign(name):
        return "Benign"

    return _CATEGORY_OF.get(canonical(name))


def category_index(name: str) -> int:
    """Index into `ATTACK_CATEGORIES`, -1 for benign or unknown names"""
    category = category_of(name)
    return ATTACK_CATEGORIES.index(category) if category in ATTACK_CATEGORIES else -1


@dataclasses.dataclass(frozen=True)
class CategoryMap:
    """
    Maps raw attack names to class indices at one granularity.

    Use `CategoryMap.for_granularity` to build the CICIoT2023 maps.
    """

    granularity: str
    classes: Tuple[str, ...]
    mapping: Dict[str, int]

    @classmethod
    def for_granularity(cls, granularity: str) -> CategoryMap:
        if granularity == BINARY:
            classes = ("benign", "malicious")
            mapping = {attack: 1 for attack in ATTACKS}
        elif granularity == CATEGORIES8:
            classes = ATTACK_CATEGORIES + ("Benign",)
            mapping = {attack: classes.index(_CATEGORY_OF[attack]) for attack in ATTACKS}
        elif granularity == ATTACKS34:
            classes = ATTACKS + (BENIGN,)
            mapping = {attack: index for index, attack in enumerate(ATTACKS)}
        else:
            raise ValueError(
                f'Unknown granularity "{granularity}". Choose one of {", ".join(GRANULARITIES)}'
            )

        benign_class = classes.index("benign" if granularity == BINARY else classes[-1])
        mapping[BENIGN] = benign_class
        return cls(granularity=granularity, classes=classes, mapping=mapping)

    @property
    def benign_class(self) -> int:
        return self.mapping[BENIGN]

    def class_of(self, name: str) -> int:
        """
        Class index of a raw label.

        Raises:
            KeyError: The name is not part of this map.
        """
        if is_benign(name):
            return self.benign_class

        return self.mapping[canonical(name)]
