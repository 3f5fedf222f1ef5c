"""Network address helpers for socket endpoints and the untrusted-source check."""

import ipaddress
from typing import Iterable, List, Optional, Tuple

try:
    from .errors import ConfigError
    from .logger import get_logger
except ImportError:  # pragma: no cover
    from errors import ConfigError  # type: ignore
    from logger import get_logger  # type: ignore

logger = get_logger("provtrace.network_utils")

Network = ipaddress.IPv4Network | ipaddress.IPv6Network

DEFAULT_TRUSTED_NETWORKS = (
    "10.0.0.0/8",
    "172.16.0.0/12",
    "192.168.0.0/16",
    "127.0.0.0/8",
    "169.254.0.0/16",
    "::1/128",
    "fe80::/10",
    "fc00::/7",
)


def split_endpoint(endpoint: str) -> Tuple[str, Optional[int]]:
    """
    Split ``host:port`` (or ``[v6]:port``) into host and port.

    Returns:
        (host, port); port is None when the endpoint carries none.
    """
    if endpoint.startswith("["):
        host, _, rest = endpoint[1:].partition("]")
        port = rest[1:] if rest.startswith(":") else ""
    elif endpoint.count(":") == 1:
        host, _, port = endpoint.partition(":")
    else:
        # bare IPv6 address or bare host
        host, port = endpoint, ""
    return host, int(port) if port.isdigit() else None


def parse_address(endpoint: str) -> Optional[ipaddress.IPv4Address | ipaddress.IPv6Address]:
    host, _ = split_endpoint(endpoint)
    try:
        return ipaddress.ip_address(host)
    except ValueError:
        return None


def parse_networks(cidrs: Optional[Iterable[str]] = None) -> List[Network]:
    """Parse CIDR strings; None gives the private, loopback and link-local ranges."""
    networks = []
    for cidr in DEFAULT_TRUSTED_NETWORKS if cidrs is None else cidrs:
        try:
            networks.append(ipaddress.ip_network(cidr.strip(), strict=False))
        except ValueError as exc:
            raise ConfigError(f"Invalid trusted network '{cidr}': {exc}") from exc
    return networks


def is_trusted(endpoint: str, networks: Iterable[Network]) -> bool:
    """
    True when the endpoint's address lies in one of the networks.

    Host names that are not IP literals are never trusted.
    """
    address = parse_address(endpoint)
    if address is None:
        logger.debug(f"Endpoint '{endpoint}' is not an IP literal, treating as untrusted")
        return False
    return any(address.version == net.version and address in net for net in networks)


def is_loopback(endpoint: str) -> bool:
    address = parse_address(endpoint)
    if address is None:
        return endpoint.split(":")[0] == "localhost"
    return address.is_loopback
