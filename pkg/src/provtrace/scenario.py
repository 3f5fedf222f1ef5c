"""Synthetic attack traces with ground truth.

Each scenario models one long-running application (a browser, a mail client
or a chat client) serving ``benign_units + 1`` user inputs, one of which
starts an attack that ends in lateral movement to an Intranet server. Units
are emitted as blocks whose order is shuffled; the malicious unit's last
block, which carries the attack, comes last. A syslog daemon adds unrelated
background traffic and ``stat``/``getpid`` lines add records the reader
skips.

Addresses: the workstation is 10.0.0.5, Intranet servers live in
10.0.0.0/24, ordinary Internet sites in 198.51.100.0/24 and the attacker in
203.0.113.0/24.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Iterator, Optional

try:
    from .forensics import backtrack, input_roots, resolve_seed, slice_stats
    from .graph import build_graph
    from .ingest import TraceFormat, format_line, read_trace_text
    from .logger import get_logger
    from .model import Event, entity_spec
    from .partition import partition_events
    from .profiles import AppProfile, builtin_profiles
except ImportError:  # pragma: no cover
    from forensics import backtrack, input_roots, resolve_seed, slice_stats  # type: ignore
    from graph import build_graph  # type: ignore
    from ingest import TraceFormat, format_line, read_trace_text  # type: ignore
    from logger import get_logger  # type: ignore
    from model import Event, entity_spec  # type: ignore
    from partition import partition_events  # type: ignore
    from profiles import AppProfile, builtin_profiles  # type: ignore

logger = get_logger("provtrace.scenario")

WORKSTATION = "10.0.0.5"
ATTACKER = "203.0.113.66"
DNS_STUB = "127.0.0.53:53"
HOME = "/home/alice"

THREAD_FLAGS = "CLONE_VM|CLONE_FS|CLONE_FILES|CLONE_SIGHAND|CLONE_THREAD"


class ScenarioKind(str, Enum):
    RAT = "rat"
    DRIVE_BY = "drive-by"
    IM = "im"
    CSRF = "csrf"
    DNS_REBINDING = "dns-rebinding"

    @classmethod
    def parse(cls, text: str) -> "ScenarioKind":
        aliases = {
            "rat": cls.RAT,
            "drive-by": cls.DRIVE_BY,
            "drivebydownload": cls.DRIVE_BY,
            "im": cls.IM,
            "imsocialengineering": cls.IM,
            "csrf": cls.CSRF,
            "dns-rebinding": cls.DNS_REBINDING,
            "dnsrebinding": cls.DNS_REBINDING,
        }
        kind = aliases.get(text.strip().lower())
        if kind is None:
            raise ValueError(f"Unknown scenario '{text}'. Allowed: {[k.value for k in cls]}")
        return kind



@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    benign_units: int = 10
    events_per_unit: int = 1000
    preamble_events: int = 200
    opaque_steps: int = 3
    blocks_per_unit: int = 3
    seed: int = 0
    fmt: TraceFormat = "pipe"

    def __post_init__(self):
        if isinstance(self.kind, str) and not isinstance(self.kind, ScenarioKind):
            object.__setattr__(self, "kind", ScenarioKind.parse(self.kind))
        if self.benign_units < 0:
            raise ValueError("benign_units must be >= 0")
        if self.events_per_unit < 1 or self.blocks_per_unit < 1:
            raise ValueError("events_per_unit and blocks_per_unit must be >= 1")
        if self.preamble_events < 0 or self.opaque_steps < 0:
            raise ValueError("preamble_events and opaque_steps must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    seed: str
    root: str
    malicious_unit: str
    benign_units: tuple[str, ...]
    profile: str

    def to_dict(self) -> dict:
        data = asdict(self)
        data["benign_units"] = list(self.benign_units)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            data["kind"],
            data["seed"],
            data["root"],
            data["malicious_unit"],
            tuple(data["benign_units"]),
            data["profile"],
        )


# --- trace writer -----------------------------------------------------------------------------


@dataclass
class _Proc:
    pid: int
    pgid: int
    comm: str
    fds: set[int] = field(default_factory=set)

    def alloc(self) -> int:
        fd = 3
        while fd in self.fds:
            fd += 1
        self.fds.add(fd)
        return fd


class _Writer:
    def __init__(self, rng: random.Random, fmt: TraceFormat):
        self.rng = rng
        self.fmt = fmt
        self.seq = 0
        self.clock = 1_700_000_000_000_000_000 + rng.randrange(10**12)
        self.lines: list[str] = []
        self.flows = 0
        self._next_pid = rng.randrange(1000, 4000)
        self._next_port = rng.randrange(33000, 45000)

    def new_pid(self) -> int:
        self._next_pid += self.rng.randint(1, 9)
        return self._next_pid

    def new_port(self) -> int:
        self._next_port += self.rng.randint(1, 17)
        return self._next_port

    def process(self, comm: str) -> _Proc:
        pid = self.new_pid()
        return _Proc(pid, pid, comm)

    def emit(self, proc: _Proc, syscall: str, args=(), retval: int = 0, tid=None, comm=None, flow=False) -> int:
        self.seq += 1
        self.clock += self.rng.randint(2_000, 40_000)
        event = Event(
            self.seq, self.clock, proc.pid, tid or proc.pid, proc.pgid, comm or proc.comm, syscall, tuple(args), retval
        )
        self.lines.append(format_line(event, self.fmt) + "\n")
        if flow:
            self.flows += 1
        return self.seq

    def noise(self, proc: _Proc):
        if self.rng.random() < 0.5:
            self.emit(proc, "stat", (("path", "/etc/localtime"),))
        else:
            self.emit(proc, "getpid", (), proc.pid)

    # syscall helpers

    def open(self, proc, path, flags="O_RDONLY", **kw) -> int:
        fd = proc.alloc()
        self.emit(proc, "open", (("path", path), ("flags", flags)), fd, **kw)
        return fd

    def close(self, proc, fd, **kw):
        proc.fds.discard(fd)
        self.emit(proc, "close", (("fd", fd),), 0, **kw)

    def read(self, proc, fd, count, syscall="read", extra=(), **kw) -> int:
        return self.emit(proc, syscall, (("fd", fd), *extra, ("count", count)), count, flow=True, **kw)

    def write(self, proc, fd, count, syscall="write", extra=(), **kw) -> int:
        return self.emit(proc, syscall, (("fd", fd), *extra, ("count", count)), count, flow=True, **kw)

    def lseek(self, proc, fd, offset, **kw):
        self.emit(proc, "lseek", (("fd", fd), ("offset", offset), ("whence", "SEEK_SET")), offset, **kw)

    def fork(self, parent: _Proc, **kw) -> _Proc:
        child = _Proc(self.new_pid(), parent.pgid, parent.comm, set(parent.fds))
        self.emit(parent, "fork", (), child.pid, flow=True, **kw)
        return child

    def execve(self, proc: _Proc, path: str, comm: str, new_group=False):
        if new_group:
            proc.pgid = proc.pid
        proc.comm = comm
        self.emit(proc, "execve", (("path", path),), 0, flow=True)

    def connect(self, proc, remote, **kw) -> tuple[int, str]:
        fd = proc.alloc()
        self.emit(proc, "socket", (("domain", "AF_INET"), ("type", "SOCK_STREAM")), fd, **kw)
        local = f"{WORKSTATION}:{self.new_port()}"
        self.emit(proc, "connect", (("fd", fd), ("addr", remote), ("laddr", local)), 0, **kw)
        return fd, local

    def dns(self, proc, name, **kw):
        fd = proc.alloc()
        self.emit(proc, "socket", (("domain", "AF_INET"), ("type", "SOCK_DGRAM")), fd, **kw)
        self.write(proc, fd, 32 + len(name), "sendto", (("addr", DNS_STUB),), **kw)
        self.read(proc, fd, 96, "recvfrom", (("addr", DNS_STUB),), **kw)
        self.close(proc, fd, **kw)

    def text(self) -> str:
        return "".join(self.lines)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


# --- applications ------------------------------------------------------------------------------


class _App:
    """One long-running application: preamble, per-unit blocks and the attack tail."""

    profile = ""

    def __init__(self, spec: ScenarioSpec, w: _Writer):
        self.spec = spec
        self.w = w
        self.rng = w.rng
        self.units = spec.benign_units + 1
        self.malicious = self.rng.randrange(self.units)
        self.keys: list[str] = [""] * self.units
        self.seed = ""
        self.root = ""

    def preamble(self):
        raise NotImplementedError

    def unit(self, index: int) -> Iterator[None]:
        raise NotImplementedError


class _Chrome(_App):
    profile = "chrome"

    def __init__(self, spec, w):
        super().__init__(spec, w)
        self.browser = w.process("chrome")
        self.io = 0
        self.channels: list[int] = []
        # (renderer, its end of the socketpair)
        self.renderers: list[tuple[_Proc, int]] = []
        self.sites = [f"198.51.100.{10 + i}:{self.rng.choice((80, 443))}" for i in range(self.units)]
        self.sites[self.malicious] = f"{ATTACKER}:80"

    def io_kw(self) -> dict:
        return {"tid": self.io, "comm": "Chrome_IOThread"}

    def preamble(self):
        w, b = self.w, self.browser
        w.execve(b, "/opt/google/chrome/chrome", "chrome")
        self.io = w.new_pid()
        w.emit(b, "clone", (("flags", THREAD_FLAGS),), self.io)
        for index in range(self.units):
            fd0, fd1 = b.alloc(), b.alloc()
            w.emit(b, "socketpair", (("domain", "AF_UNIX"), ("type", "SOCK_SEQPACKET"), ("fd0", fd0), ("fd1", fd1)), 0)
            renderer = w.fork(b)
            w.close(renderer, fd0)
            w.close(b, fd1)
            pak = w.open(renderer, "/opt/google/chrome/resources.pak")
            w.read(renderer, pak, 65536)
            w.close(renderer, pak)
            self.channels.append(fd0)
            self.renderers.append((renderer, fd1))
            self.keys[index] = f"peer:{renderer.pid}"
        config = f"{HOME}/.config/google-chrome/Default"
        prefs = w.open(b, f"{config}/Preferences")
        w.read(b, prefs, 8192)
        w.close(b, prefs)
        history = w.open(b, f"{config}/History", "O_RDWR")
        while w.flows < self.spec.preamble_events:
            w.write(b, history, 4096)
            if self.rng.random() < 0.1:
                w.noise(b)

    def unit(self, index: int) -> Iterator[None]:
        w, b = self.w, self.browser
        renderer, rfd = self.renderers[index]
        channel = self.channels[index]
        site = self.sites[index]
        host = f"site{index}.example"
        budgets = _split(self.spec.events_per_unit, self.spec.blocks_per_unit)
        cache = None
        sock = None
        for block, budget in enumerate(budgets):
            start = w.flows
            w.read(b, channel, 64, "recvmsg", (("peer", renderer.pid),))
            if block == 0:
                w.dns(b, host, **self.io_kw())
                sock, local = w.connect(b, site, **self.io_kw())
                if index == self.malicious:
                    self.root = f"sock:{local}-{site}"
                cache = w.open(b, f"{HOME}/.cache/google-chrome/Default/Cache/f_{index:06x}", "O_WRONLY|O_CREAT")
            w.write(b, sock, 320, "send", **self.io_kw())
            w.read(b, sock, 1460 + self.rng.randrange(2000), "recv", **self.io_kw())
            w.write(b, channel, 2048, "sendmsg")
            w.read(renderer, rfd, 2048)
            if block == 0:
                font = w.open(renderer, "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf")
                w.read(renderer, font, 4096)
                w.close(renderer, font)
            w.write(renderer, rfd, 512)
            last = block == len(budgets) - 1
            if last and index == self.malicious:
                self.attack(b)
            while w.flows - start < budget:
                w.write(b, cache, 4096)
                if self.rng.random() < 0.05:
                    w.noise(b)
            if not last:
                yield

    def attack(self, b: _Proc):
        kind = self.spec.kind
        if kind is ScenarioKind.DRIVE_BY:
            self._drive_by(b)
            return
        if kind is ScenarioKind.DNS_REBINDING:
            self.w.dns(b, "rebind.attacker.example", **self.io_kw())
        intranet = f"10.0.0.30:{443 if kind is ScenarioKind.CSRF else 80}"
        fd, local = self.w.connect(b, intranet, **self.io_kw())
        seq = self.w.write(b, fd, 700, "send", **self.io_kw())
        self.seed = f"sock:{local}-{intranet}@{seq}"

    def _drive_by(self, b: _Proc):
        w = self.w
        jar = f"{HOME}/.cache/google-chrome/Default/applet.jar"
        fd = w.open(b, jar, "O_WRONLY|O_CREAT")
        w.write(b, fd, 20480)
        w.close(b, fd)
        java = w.fork(b)
        w.execve(java, "/usr/lib/jvm/java-8-openjdk/bin/java", "java", new_group=True)
        fd = w.open(java, jar)
        w.read(java, fd, 20480)
        w.close(java, fd)
        helper = java
        for _ in range(self.spec.opaque_steps):
            helper = w.fork(helper)
            tmp = w.open(helper, f"/tmp/hsperfdata_alice/{helper.pid}", "O_WRONLY|O_CREAT")
            w.write(helper, tmp, 32768)
            w.close(helper, tmp)
        payload = "/tmp/.x11-unix-payload"
        fd = w.open(helper, payload, "O_WRONLY|O_CREAT")
        w.write(helper, fd, 45056)
        w.close(helper, fd)
        shell = w.fork(helper)
        w.execve(shell, payload, "payload")
        cc, _ = w.connect(shell, f"{ATTACKER}:4444")
        w.read(shell, cc, 128, "recv")
        sh = w.fork(shell)
        w.execve(sh, "/bin/sh", "sh")
        fd = w.open(sh, f"{HOME}/.bash_history")
        w.read(sh, fd, 6144)
        w.close(sh, fd)
        git = w.fork(sh)
        w.execve(git, "/usr/bin/git", "git")
        fd = w.open(git, f"{HOME}/.gitconfig")
        w.read(git, fd, 256)
        w.close(git, fd)
        ssh = w.fork(git)
        w.execve(ssh, "/usr/bin/ssh", "ssh")
        fd = w.open(ssh, f"{HOME}/.ssh/id_rsa")
        w.read(ssh, fd, 1679)
        w.close(ssh, fd)
        remote = "10.0.0.20:22"
        sock, local = w.connect(ssh, remote)
        seq = w.write(ssh, sock, 1024)
        w.write(ssh, sock, 65536)
        self.seed = f"sock:{local}-{remote}@{seq}"


class _Thunderbird(_App):
    profile = "thunderbird"
    inbox = f"{HOME}/.thunderbird/k2x9.default/Mail/Local_Folders/INBOX"

    def __init__(self, spec, w):
        super().__init__(spec, w)
        self.client = w.process("thunderbird")
        self.shell = w.process("bash")
        self.inbox_fd = 0
        self.messages = []
        offset = 0
        for _ in range(self.units):
            length = 2048 + self.rng.randrange(30000)
            self.messages.append((offset, length))
            offset += length + 1 + self.rng.randrange(512)

    def preamble(self):
        w, t = self.w, self.client
        w.execve(self.shell, "/bin/bash", "bash")
        rc = w.open(self.shell, f"{HOME}/.bashrc")
        w.read(self.shell, rc, 3771)
        w.close(self.shell, rc)
        w.execve(t, "/usr/lib/thunderbird/thunderbird", "thunderbird")
        profile = f"{HOME}/.thunderbird/k2x9.default"
        prefs = w.open(t, f"{profile}/prefs.js")
        w.read(t, prefs, 12288)
        w.close(t, prefs)
        self.inbox_fd = w.open(t, self.inbox)
        for index, (offset, _) in enumerate(self.messages):
            self.keys[index] = f"{self.inbox}@{offset}"
        session = w.open(t, f"{profile}/session.json", "O_WRONLY|O_CREAT")
        while w.flows < self.spec.preamble_events:
            w.write(t, session, 1024)
            if self.rng.random() < 0.1:
                w.noise(t)

    def unit(self, index: int) -> Iterator[None]:
        w, t = self.w, self.client
        offset, length = self.messages[index]
        budgets = _split(self.spec.events_per_unit, self.spec.blocks_per_unit)
        cache = None
        for block, budget in enumerate(budgets):
            start = w.flows
            w.lseek(t, self.inbox_fd, offset)
            w.read(t, self.inbox_fd, length)
            if block == 0:
                cache = w.open(t, f"{HOME}/.thunderbird/k2x9.default/ImapMail/cache/m{index:04d}", "O_WRONLY|O_CREAT")
            last = block == len(budgets) - 1
            if last and index == self.malicious:
                fd = w.open(t, f"{HOME}/Downloads/invoice.sh", "O_WRONLY|O_CREAT")
                w.write(t, fd, 2048)
                w.close(t, fd)
            while w.flows - start < budget:
                w.write(t, cache, 512)
                if self.rng.random() < 0.05:
                    w.noise(t)
            if not last:
                yield

    def tail(self):
        w = self.w
        script = w.fork(self.shell)
        w.execve(script, f"{HOME}/Downloads/invoice.sh", "invoice.sh")
        helper = script
        for _ in range(self.spec.opaque_steps):
            helper = w.fork(helper)
            fd = w.open(helper, "/etc/hosts")
            w.read(helper, fd, 220)
            w.close(helper, fd)
        nmap = w.fork(helper)
        w.execve(nmap, "/usr/bin/nmap", "nmap")
        remote = "10.0.0.21:22"
        sock, local = w.connect(nmap, remote)
        seq = w.write(nmap, sock, 60)
        self.seed = f"sock:{local}-{remote}@{seq}"
        offset, length = self.messages[self.malicious]
        self.root = f"file:{self.inbox}@{offset},{offset + length}"


class _Pidgin(_App):
    profile = "pidgin"

    def __init__(self, spec, w):
        super().__init__(spec, w)
        self.client = w.process("pidgin")
        self.server = 0
        self.logs = [
            f"{HOME}/.purple/logs/jabber/alice@example.com/buddy{index}@example.org/2026-03-0{1 + index % 9}.txt"
            for index in range(self.units)
        ]
        self.keys = list(self.logs)

    def preamble(self):
        w, p = self.w, self.client
        w.execve(p, "/usr/bin/pidgin", "pidgin")
        for name, size in (("accounts.xml", 2300), ("prefs.xml", 9000), ("blist.xml", 4100)):
            fd = w.open(p, f"{HOME}/.purple/{name}")
            w.read(p, fd, size)
            w.close(p, fd)
        self.server, _ = w.connect(p, "198.51.100.40:5222")
        status = w.open(p, f"{HOME}/.purple/status.xml", "O_WRONLY|O_CREAT")
        while w.flows < self.spec.preamble_events:
            w.write(p, status, 256)
            if self.rng.random() < 0.1:
                w.noise(p)

    def unit(self, index: int) -> Iterator[None]:
        w, p = self.w, self.client
        budgets = _split(self.spec.events_per_unit, self.spec.blocks_per_unit)
        log = cache = None
        for block, budget in enumerate(budgets):
            start = w.flows
            if block == 0:
                log = w.open(p, self.logs[index])
                cache = w.open(p, f"{HOME}/.purple/icons/buddy{index}.png", "O_WRONLY|O_CREAT")
            w.lseek(p, log, 0)
            w.read(p, log, 512)
            w.read(p, self.server, 300 + self.rng.randrange(700), "recv")
            last = block == len(budgets) - 1
            if last and index == self.malicious:
                self.attack(p)
            while w.flows - start < budget:
                w.write(p, cache, 1024)
                if self.rng.random() < 0.05:
                    w.noise(p)
            if not last:
                yield

    def attack(self, p: _Proc):
        w = self.w
        browser = w.fork(p)
        w.execve(browser, "/usr/bin/google-chrome", "chrome", new_group=True)
        helper = browser
        for _ in range(self.spec.opaque_steps):
            helper = w.fork(helper)
            fd = w.open(helper, "/opt/google/chrome/icudtl.dat")
            w.read(helper, fd, 4096)
            w.close(helper, fd)
        remote = "10.0.0.31:80"
        sock, local = w.connect(helper, remote)
        seq = w.write(helper, sock, 900)
        self.seed = f"sock:{local}-{remote}@{seq}"
        self.root = f"file:{self.logs[self.malicious]}@0,512"


_APPS: dict[ScenarioKind, Callable[[ScenarioSpec, _Writer], _App]] = {
    ScenarioKind.RAT: _Thunderbird,
    ScenarioKind.IM: _Pidgin,
    ScenarioKind.DRIVE_BY: _Chrome,
    ScenarioKind.CSRF: _Chrome,
    ScenarioKind.DNS_REBINDING: _Chrome,
}


def generate(spec: ScenarioSpec) -> tuple[str, GroundTruth]:
    """Trace text plus the ground truth needed to check an investigation of it."""
    rng = random.Random(spec.seed)
    w = _Writer(rng, spec.fmt)
    app = _APPS[spec.kind](spec, w)

    daemon = w.process("rsyslogd")
    kmsg = w.open(daemon, "/proc/kmsg")
    syslog = w.open(daemon, "/var/log/syslog", "O_WRONLY|O_APPEND")

    def background():
        w.read(daemon, kmsg, 120)
        w.write(daemon, syslog, 120)

    app.preamble()

    order = [index for index in range(app.units) for _ in range(spec.blocks_per_unit)]
    rng.shuffle(order)
    order.remove(app.malicious)
    order.append(app.malicious)
    # the malicious unit's blocks keep their relative order; its final block runs last
    blocks = {index: app.unit(index) for index in range(app.units)}
    for index in order:
        next(blocks[index], None)
        if rng.random() < 0.3:
            background()
        if rng.random() < 0.2:
            w.noise(daemon)

    if isinstance(app, _Thunderbird):
        app.tail()

    benign = tuple(key for index, key in enumerate(app.keys) if index != app.malicious)
    truth = GroundTruth(spec.kind.value, app.seed, app.root, app.keys[app.malicious], benign, app.profile)
    logger.debug(f"Generated {spec.kind.value} scenario: {w.seq} records, {w.flows} flows")
    return w.text(), truth


# --- verification -----------------------------------------------------------------------------


@dataclass
class VerificationReport:
    root_found: bool
    input_roots: list[str]
    benign_leaks: list[str]
    diagnostics: int
    stats: dict
    expected_root: str

    @property
    def ok(self) -> bool:
        return (
            self.root_found
            and not self.benign_leaks
            and self.input_roots == [self.expected_root]
            and self.diagnostics == 0
        )

    def as_dict(self) -> dict:
        return {**asdict(self), "ok": self.ok}


def verify_ground_truth(
    trace_text: str,
    truth: GroundTruth,
    profiles: Optional[list[AppProfile]] = None,
    fmt: TraceFormat = "pipe",
) -> VerificationReport:
    """Run ingest, build, partition and backtrack on a generated trace and compare with its ground truth."""
    events, _ = read_trace_text(trace_text, fmt)
    graph = build_graph(events)
    partition = partition_events(events, profiles or builtin_profiles(), graph)
    seed = resolve_seed(graph, truth.seed)
    root = graph.resolve(truth.root)
    causal = backtrack(graph, partition, seed)

    benign = set(truth.benign_units)
    leaks = set()
    for unit in partition.units.values():
        if unit.profile == truth.profile and unit.key in benign:
            leaks |= unit.provenance & causal.entities
    return VerificationReport(
        root_found=root in causal.root_candidates,
        input_roots=sorted(entity_spec(graph.entity(eid)) for eid in input_roots(causal, partition)),
        benign_leaks=sorted(entity_spec(graph.entity(eid)) for eid in leaks),
        diagnostics=len(graph.diagnostics),
        stats=slice_stats(causal, graph),
        expected_root=entity_spec(graph.entity(root)),
    )
