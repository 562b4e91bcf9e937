"""Experiment config files: parsing, defaults and canonical text.

The format is INI-like with four kinds of section::

    [dataset]      num_classes, samples_per_class, ambient_dim, embed_dim,
                   noise_sigma, seed
    [training]     epochs, batch_size, learning_rate, momentum, weight_decay,
                   lr_drop_epochs, lr_drop_factor, hidden, seed,
                   renormalize_weights_after_step
    [loss.N]       variant, name, s, t, m1, m2, m3, gamma, hard_fraction,
                   differentiate_focal_weight
    [eval]         far_targets, pair_cap, gallery_per_class,
                   gradcheck_instances, gradcheck_step, gradcheck_tolerance

Lists are comma separated. Every key is optional except ``variant``;
unknown sections and keys are errors. Loss sections are ordered by N.
"""

import configparser
import dataclasses
import hashlib
import logging
import re
from dataclasses import dataclass, field

from .errors import InvalidMargin, InvalidValue, ParseError, UnknownKey
from .losses import (
    AM_MARGIN, ARC_MARGIN, DEFAULT_SCALE, T_DIVERGENCE_GUIDANCE, LossSpec, Variant,
)
from .trainer import SyntheticSpec, TrainConfig

log = logging.getLogger(__name__)

U64_MAX = 2**64 - 1

# alias -> (variant, default margin components when none are given)
VARIANT_ALIASES = {
    "softmax": (Variant.SOFTMAX, None),
    "focal_softmax": (Variant.FOCAL, None),
    "focal": (Variant.FOCAL, None),
    "hm_softmax": (Variant.HM, None),
    "hm": (Variant.HM, None),
    "margin_softmax": (Variant.MARGIN, {"m2": AM_MARGIN}),
    "am_softmax": (Variant.MARGIN, {"m2": AM_MARGIN}),
    "arc_softmax": (Variant.MARGIN, {"m3": ARC_MARGIN}),
    "naive_fused_focal": (Variant.NAIVE_FOCAL, {"m2": AM_MARGIN}),
    "naive_fused_hm": (Variant.NAIVE_HM, {"m2": AM_MARGIN}),
    "sv_softmax": (Variant.SV, None),
    "svx_softmax": (Variant.SVX, {"m2": AM_MARGIN}),
    "sv_x_softmax": (Variant.SVX, {"m2": AM_MARGIN}),
    "sv_am_softmax": (Variant.SVX, {"m2": AM_MARGIN}),
    "sv_arc_softmax": (Variant.SVX, {"m3": ARC_MARGIN}),
}

DATASET_KEYS = ("num_classes", "samples_per_class", "ambient_dim", "embed_dim", "noise_sigma", "seed")
TRAINING_KEYS = ("epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "lr_drop_epochs",
                 "lr_drop_factor", "hidden", "seed", "renormalize_weights_after_step")
LOSS_KEYS = ("variant", "name", "s", "t", "m1", "m2", "m3", "gamma", "hard_fraction",
             "differentiate_focal_weight")
EVAL_KEYS = ("far_targets", "pair_cap", "gallery_per_class", "gradcheck_instances", "gradcheck_step",
             "gradcheck_tolerance")

_LOSS_SECTION = re.compile(r"^loss\.([0-9]+)$")
_NAME = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class LossEntry:
    name: str
    spec: LossSpec


@dataclass(frozen=True)
class EvalConfig:
    far_targets: tuple = (1e-1, 1e-2)
    pair_cap: int = 10_000
    gallery_per_class: int = 1
    gradcheck_instances: int = 20
    gradcheck_step: float = 1e-6
    gradcheck_tolerance: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "far_targets", tuple(float(f) for f in self.far_targets))
        if not self.far_targets:
            raise InvalidValue("far_targets must list at least one rate")
        if any(not 0.0 < f <= 1.0 for f in self.far_targets):
            raise InvalidValue("far_targets must lie in (0, 1]")
        if self.pair_cap < 1 or self.gallery_per_class < 1 or self.gradcheck_instances < 1:
            raise InvalidValue("pair_cap, gallery_per_class and gradcheck_instances must be >= 1")
        if not 1e-8 <= self.gradcheck_step <= 1e-4:
            raise InvalidValue("gradcheck_step must lie in [1e-8, 1e-4]")
        if not self.gradcheck_tolerance > 0:
            raise InvalidValue("gradcheck_tolerance must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed config. ``training.spec`` is the first loss; use :meth:`train_config`."""

    dataset: SyntheticSpec
    training: TrainConfig
    losses: tuple
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not self.losses:
            raise ParseError("config defines no [loss.N] section")

    def train_config(self, entry):
        return dataclasses.replace(self.training, spec=entry.spec)

    def with_seed(self, seed):
        """The same experiment with every seed replaced by ``seed``."""
        seed = check_seed(seed)
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            training=dataclasses.replace(self.training, seed=seed),
        )

    @property
    def seed(self):
        return self.training.seed

    def canonical_text(self):
        return dump_config(self)

    def digest(self):
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise InvalidValue(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


# ---------------------------------------------------------------------------
# parsing


def _key_lines(text):
    """(section, key) -> 1-based line number, for error messages."""
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines[(section, None)] = no
        elif section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), no)
    return lines


class _Section:
    """Typed access to one section, remembering which keys were read."""

    def __init__(self, name, items, lines, allowed):
        self.name = name
        self.items = dict(items)
        self.lines = lines
        for key in self.items:
            if key not in allowed:
                raise UnknownKey(f"unknown key {key!r} in [{name}]", self.line(key))

    def line(self, key=None):
        return self.lines.get((self.name, key), self.lines.get((self.name, None)))

    def _get(self, key, convert, default, what):
        if key not in self.items:
            return default
        raw = self.items[key].strip()
        try:
            return convert(raw)
        except (ValueError, TypeError):
            raise InvalidValue(f"[{self.name}] {key} = {raw!r} is not {what}", self.line(key)) from None

    def int(self, key, default):
        return self._get(key, int, default, "an integer")

    def float(self, key, default):
        return self._get(key, float, default, "a number")

    def bool(self, key, default):
        def conv(raw):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return self._get(key, conv, default, "a boolean")

    def str(self, key, default):
        return self._get(key, str, default, "text")

    def floats(self, key, default):
        return self._get(key, lambda r: tuple(float(v) for v in _split(r)), default, "a list of numbers")

    def ints(self, key, default):
        return self._get(key, lambda r: tuple(int(v) for v in _split(r)), default, "a list of integers")


def _split(raw):
    return [v.strip() for v in raw.split(",") if v.strip()]


def _build(section, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (InvalidValue, InvalidMargin) as exc:
        raise InvalidValue(f"[{section.name}] {exc}", section.line()) from None


def parse_config_text(text):
    """Parse config text into an :class:`ExperimentConfig`.

    Raises
    ------
    ParseError
        Malformed syntax, duplicate keys or sections, or no loss section.
    UnknownKey
        A section or key outside the documented set.
    InvalidValue
        A value that does not convert or breaks its type's invariant.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any section", exc.lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ParseError(exc.message.split(":")[-1].strip(), exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("expected 'key = value'", line) from None
    lines = _key_lines(text)

    loss_sections = []
    for name in parser.sections():
        m = _LOSS_SECTION.match(name)
        if m:
            loss_sections.append((int(m.group(1)), name))
        elif name not in ("dataset", "training", "eval"):
            raise UnknownKey(f"unknown section [{name}]", lines.get((name, None)))
    loss_sections.sort()
    indices = [i for i, _ in loss_sections]
    if len(set(indices)) != len(indices):
        raise ParseError("two loss sections share an index", lines.get((loss_sections[0][1], None)))
    if not loss_sections:
        raise ParseError("config defines no [loss.N] section")

    def section(name, allowed):
        items = parser.items(name) if parser.has_section(name) else []
        return _Section(name, items, lines, allowed)

    ds = section("dataset", DATASET_KEYS)
    base = SyntheticSpec()
    dataset = _build(
        ds, SyntheticSpec,
        num_classes=ds.int("num_classes", base.num_classes),
        samples_per_class=ds.int("samples_per_class", base.samples_per_class),
        ambient_dim=ds.int("ambient_dim", base.ambient_dim),
        embed_dim=ds.int("embed_dim", base.embed_dim),
        noise_sigma=ds.float("noise_sigma", base.noise_sigma),
        seed=ds.int("seed", base.seed),
    )

    losses = []
    names = set()
    for index, sec_name in loss_sections:
        entry = _parse_loss(section(sec_name, LOSS_KEYS), index, names)
        names.add(entry.name)
        losses.append(entry)

    tr = section("training", TRAINING_KEYS)
    defaults = TrainConfig(losses[0].spec)
    training = _build(
        tr, TrainConfig,
        spec=losses[0].spec,
        epochs=tr.int("epochs", defaults.epochs),
        batch_size=tr.int("batch_size", defaults.batch_size),
        learning_rate=tr.float("learning_rate", defaults.learning_rate),
        momentum=tr.float("momentum", defaults.momentum),
        weight_decay=tr.float("weight_decay", defaults.weight_decay),
        lr_drop_epochs=tr.ints("lr_drop_epochs", defaults.lr_drop_epochs),
        lr_drop_factor=tr.float("lr_drop_factor", defaults.lr_drop_factor),
        hidden=tr.ints("hidden", defaults.hidden),
        seed=tr.int("seed", dataset.seed),
        renormalize_weights_after_step=tr.bool("renormalize_weights_after_step",
                                               defaults.renormalize_weights_after_step),
    )
    if not 0 <= training.seed <= U64_MAX:
        raise InvalidValue("[training] seed must be an unsigned 64-bit integer", tr.line("seed"))

    ev = section("eval", EVAL_KEYS)
    base_eval = EvalConfig()
    evaluation = _build(
        ev, EvalConfig,
        far_targets=ev.floats("far_targets", base_eval.far_targets),
        pair_cap=ev.int("pair_cap", base_eval.pair_cap),
        gallery_per_class=ev.int("gallery_per_class", base_eval.gallery_per_class),
        gradcheck_instances=ev.int("gradcheck_instances", base_eval.gradcheck_instances),
        gradcheck_step=ev.float("gradcheck_step", base_eval.gradcheck_step),
        gradcheck_tolerance=ev.float("gradcheck_tolerance", base_eval.gradcheck_tolerance),
    )
    return ExperimentConfig(dataset, training, tuple(losses), evaluation)


def _parse_loss(sec, index, taken):
    alias = sec.str("variant", None)
    if alias is None:
        raise ParseError(f"[{sec.name}] needs a variant", sec.line())
    alias = alias.lower()
    if alias not in VARIANT_ALIASES:
        raise InvalidValue(f"[{sec.name}] unknown variant {alias!r}", sec.line("variant"))
    variant, margin_default = VARIANT_ALIASES[alias]
    kw = {
        "s": sec.float("s", DEFAULT_SCALE),
        "t": sec.float("t", None),
        "m1": sec.float("m1", None),
        "m2": sec.float("m2", None),
        "m3": sec.float("m3", None),
        "gamma": sec.float("gamma", None),
        "hard_fraction": sec.float("hard_fraction", None),
        "differentiate_focal_weight": sec.bool("differentiate_focal_weight", False),
    }
    if margin_default and all(kw[m] is None for m in ("m1", "m2", "m3")):
        kw.update(margin_default)
    spec = _build(sec, LossSpec.make, variant=variant, **kw)
    if spec.sv.t > T_DIVERGENCE_GUIDANCE:
        log.warning("line %s: [%s] t = %g exceeds %g; training may fail to converge",
                    sec.line("t"), sec.name, spec.sv.t, T_DIVERGENCE_GUIDANCE)
    name = sec.str("name", None)
    if name is None:
        name = alias if alias not in taken else f"{alias}_{index}"
    if not _NAME.match(name):
        raise InvalidValue(f"[{sec.name}] name {name!r} must match {_NAME.pattern}", sec.line("name"))
    if name in taken:
        raise InvalidValue(f"[{sec.name}] duplicate loss name {name!r}", sec.line("name"))
    return LossEntry(name, spec)


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8: {exc}") from None
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# canonical text


def _num(v):
    return repr(float(v))


def _list(values, fmt):
    return ", ".join(fmt(v) for v in values)


def dump_config(cfg):
    """Every key written explicitly in a fixed order; parses back to ``cfg``."""
    ds, tr, ev = cfg.dataset, cfg.training, cfg.eval
    out = [
        "[dataset]",
        f"num_classes = {ds.num_classes}",
        f"samples_per_class = {ds.samples_per_class}",
        f"ambient_dim = {ds.ambient_dim}",
        f"embed_dim = {ds.embed_dim}",
        f"noise_sigma = {_num(ds.noise_sigma)}",
        f"seed = {ds.seed}",
        "",
        "[training]",
        f"epochs = {tr.epochs}",
        f"batch_size = {tr.batch_size}",
        f"learning_rate = {_num(tr.learning_rate)}",
        f"momentum = {_num(tr.momentum)}",
        f"weight_decay = {_num(tr.weight_decay)}",
        f"lr_drop_epochs = {_list(tr.lr_drop_epochs, str)}",
        f"lr_drop_factor = {_num(tr.lr_drop_factor)}",
        f"hidden = {_list(tr.hidden, str)}",
        f"seed = {tr.seed}",
        f"renormalize_weights_after_step = {str(tr.renormalize_weights_after_step).lower()}",
        "",
    ]
    for i, entry in enumerate(cfg.losses, start=1):
        sp = entry.spec
        out += [
            f"[loss.{i}]",
            f"name = {entry.name}",
            f"variant = {sp.variant.value}",
            f"s = {_num(sp.sv.s)}",
            f"t = {_num(sp.sv.t)}",
            f"m1 = {_num(sp.margin.m1)}",
            f"m2 = {_num(sp.margin.m2)}",
            f"m3 = {_num(sp.margin.m3)}",
            f"gamma = {_num(sp.mining.gamma)}",
            f"hard_fraction = {_num(sp.mining.hard_fraction)}",
            f"differentiate_focal_weight = {str(sp.differentiate_focal_weight).lower()}",
            "",
        ]
    out += [
        "[eval]",
        f"far_targets = {_list(ev.far_targets, _num)}",
        f"pair_cap = {ev.pair_cap}",
        f"gallery_per_class = {ev.gallery_per_class}",
        f"gradcheck_instances = {ev.gradcheck_instances}",
        f"gradcheck_step = {_num(ev.gradcheck_step)}",
        f"gradcheck_tolerance = {_num(ev.gradcheck_tolerance)}",
    ]
    return "\n".join(out) + "\n"
