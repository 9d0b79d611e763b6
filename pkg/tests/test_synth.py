import io

import numpy as np
import pytest

from meterguard import synth
from meterguard.telemetry import CLASS_NAMES, FEATURE_NAMES, WorkloadClass

# A structurally minimal profile: every class one mode, everything uniform.
FLAT_PROFILE = "\n".join(
    f"{cls}.{metric} = uniform(0, 10)"
    for cls in CLASS_NAMES
    for metric in FEATURE_NAMES
)


def with_lines(*extra):
    return FLAT_PROFILE + "\n" + "\n".join(extra)


# --- apportionment ----------------------------------------------------------


def test_mixture_counts_exact_total():
    assert synth.mixture_counts([0.5, 0.3, 0.2], 10) == [5, 3, 2]
    assert synth.mixture_counts([1.0], 7) == [7]


def test_mixture_counts_largest_remainder():
    # 7 * [0.4, 0.6] = [2.8, 4.2]; the 0.8 remainder wins the spare row
    assert synth.mixture_counts([0.4, 0.6], 7) == [3, 4]


def test_mixture_counts_remainder_tie_prefers_earlier():
    assert synth.mixture_counts([0.5, 0.5], 5) == [3, 2]


def test_mixture_counts_default_loss_mode():
    # the count behind the <= 3% bound on the standard corpus
    assert synth.mixture_counts([0.97, 0.03], 7201) == [6985, 216]
    assert 216 / 7201 <= 0.03


# --- distribution and profile validation ------------------------------------


@pytest.mark.parametrize("line", [
    "Ddos.cpu_util = uniform(5, 1)",          # hi < lo
    "Ddos.cpu_util = uniform(-1, 1)",         # negative support
    "Ddos.cpu_util = log_uniform(0, 10)",     # needs positive lo
    "Ddos.cpu_util = normal(5, 0)",           # sd must be positive
    "Ddos.cpu_util = levels()",               # no levels
    "Ddos.cpu_util = levels(10; jitter=1.5)", # jitter out of range
    "Ddos.cpu_util = gamma(2, 3)",            # unknown distribution
])
def test_invalid_distributions_rejected(line):
    bad = FLAT_PROFILE.replace("Ddos.cpu_util = uniform(0, 10)", line)
    with pytest.raises(synth.InvalidProfile):
        synth.parse_profile(bad)


@pytest.mark.parametrize("extra, hint", [
    ("Webserver.cpu_util = uniform(0, 1)", "unknown class"),
    ("Ddos.gpu_util = uniform(0, 1)", "unknown metric"),
    ("Ddos[2].weight = 0.1", "undefined mode"),
    ("Ddos[1].weight = 1.2", None),
    ("Ddos.cpu_util = uniform(0, 1)", "duplicate"),
])
def test_profile_structural_errors(extra, hint):
    with pytest.raises(synth.InvalidProfile) as exc:
        synth.parse_profile(with_lines(extra))
    if hint:
        assert hint in str(exc.value)


def test_profile_requires_every_class():
    partial = "\n".join(
        line for line in FLAT_PROFILE.splitlines()
        if not line.startswith("Hadoop")
    )
    with pytest.raises(synth.InvalidProfile, match="Hadoop"):
        synth.parse_profile(partial)


def test_profile_requires_all_nine_metrics():
    partial = FLAT_PROFILE.replace("Ddos.net_incoming_bytes_rate = uniform(0, 10)\n", "")
    with pytest.raises(synth.InvalidProfile, match="net_incoming_bytes_rate"):
        synth.parse_profile(partial)


def test_profile_extra_mode_needs_all_metrics_and_weight():
    with pytest.raises(synth.InvalidProfile, match="missing"):
        synth.parse_profile(with_lines("Ddos[1].cpu_util = uniform(0, 1)"))

    full_mode = [
        f"Ddos[1].{m} = uniform(0, 1)" for m in FEATURE_NAMES
    ]
    with pytest.raises(synth.InvalidProfile, match="weight"):
        synth.parse_profile(with_lines(*full_mode))

    profile = synth.parse_profile(with_lines(*full_mode, "Ddos[1].weight = 0.25"))
    modes = profile.classes[WorkloadClass.Ddos].modes
    assert [m.weight for m in modes] == [0.75, 0.25]


def test_profile_mode_indices_contiguous():
    gap = [f"Ddos[2].{m} = uniform(0, 1)" for m in FEATURE_NAMES]
    with pytest.raises(synth.InvalidProfile, match="contiguous"):
        synth.parse_profile(with_lines(*gap, "Ddos[2].weight = 0.1"))


def test_ratio_source_ordering():
    ok = FLAT_PROFILE.replace(
        "Ddos.net_incoming_packets_rate = uniform(0, 10)",
        "Ddos.net_incoming_packets_rate = ratio(net_incoming_bytes_rate, uniform(500, 1500))",
    )
    synth.parse_profile(ok)  # bytes column precedes packets: fine

    backwards = FLAT_PROFILE.replace(
        "Ddos.net_incoming_bytes_rate = uniform(0, 10)",
        "Ddos.net_incoming_bytes_rate = ratio(net_incoming_packets_rate, uniform(2, 3))",
    )
    with pytest.raises(synth.InvalidProfile, match="earlier"):
        synth.parse_profile(backwards)


def test_ratio_divisor_cannot_cross_zero():
    bad = FLAT_PROFILE.replace(
        "Ddos.net_incoming_packets_rate = uniform(0, 10)",
        "Ddos.net_incoming_packets_rate = ratio(net_incoming_bytes_rate, uniform(0, 2))",
    )
    with pytest.raises(synth.InvalidProfile):
        synth.parse_profile(bad)


def test_profile_comments_and_blank_lines_ignored():
    text = "# top comment\n\n" + FLAT_PROFILE + "   # trailing\n"
    synth.parse_profile(text)


# --- drawing ----------------------------------------------------------------


def test_levels_draw_stays_within_jitter(rng):
    d = synth.Levels(values=(100.0, 200.0), jitter=0.1, weights=None)
    out = d.draw(rng, 400, {})
    lo, hi = d.support()
    assert lo == 100.0 * 0.9 and hi == 200.0 * 1.1
    assert np.all((out >= lo) & (out <= hi))
    # both levels actually appear
    assert np.any(out < 115) and np.any(out > 175)


def test_levels_weights_apportion_exactly(rng):
    d = synth.Levels(values=(1.0, 1000.0), jitter=0.0, weights=(0.25, 0.75))
    out = d.draw(rng, 8, {})
    assert int(np.sum(out == 1.0)) == 2
    assert int(np.sum(out == 1000.0)) == 6


def test_normal_draw_clamped_at_zero(rng):
    d = synth.Normal(mean=0.5, sd=5.0)
    out = d.draw(rng, 500, {})
    assert np.all(out >= 0.0)


def test_ratio_draw_divides_source(rng):
    d = synth.Ratio(source="net_incoming_bytes_rate",
                    divisor=synth.Uniform(2.0, 2.0))
    src = np.array([10.0, 30.0])
    out = d.draw(rng, 2, {"net_incoming_bytes_rate": src})
    assert np.allclose(out, [5.0, 15.0])


def test_log_uniform_range(rng):
    d = synth.LogUniform(1.0, 1000.0)
    out = d.draw(rng, 1000, {})
    assert np.all((out >= 1.0) & (out <= 1000.0))
    # roughly log-spread: a quarter of mass below 10^1.5 is plausible;
    # a plain uniform would put ~97% above 31.6
    assert np.mean(out < 31.6) > 0.35


# --- synthesize -------------------------------------------------------------


def test_synthesize_counts_and_layout():
    ds = synth.synthesize(synth.SynthConfig(samples_per_class=12, seed=3))
    assert len(ds) == 60
    for cls in WorkloadClass:
        assert ds.class_counts[cls] == 12
    first = ds.rows[0]
    assert first.sample.resource_id == "hadoop-00"
    assert first.sample.timestamp == 0.0


def test_synthesize_cadence_and_resource_split():
    cfg = synth.SynthConfig(samples_per_class=10, resources_per_class=2,
                            cadence=5.0, seed=3)
    ds = synth.synthesize(cfg)
    ddos = [r.sample for r in ds.rows if r.label == WorkloadClass.Ddos]
    by_res = {}
    for s in ddos:
        by_res.setdefault(s.resource_id, []).append(s.timestamp)
    assert set(by_res) == {"ddos-00", "ddos-01"}
    for stamps in by_res.values():
        assert stamps == [5.0 * i for i in range(len(stamps))]
    assert sorted(len(v) for v in by_res.values()) == [5, 5]


def test_synthesize_deterministic_per_seed():
    cfg = synth.SynthConfig(samples_per_class=25, seed=11)
    a = synth.synthesize(cfg)
    b = synth.synthesize(cfg)
    assert a.rows == b.rows
    c = synth.synthesize(synth.SynthConfig(samples_per_class=25, seed=12))
    assert a.rows != c.rows


def test_synthesize_class_streams_independent():
    """Per-class draws do not shift when another class's rows change."""
    flat = synth.parse_profile(FLAT_PROFILE)
    a = synth.synthesize(synth.SynthConfig(samples_per_class=20, seed=7), flat)
    b = synth.synthesize(synth.SynthConfig(samples_per_class=20, seed=7),
                         synth.parse_profile(
                             FLAT_PROFILE.replace(
                                 "Hadoop.cpu_util = uniform(0, 10)",
                                 "Hadoop.cpu_util = uniform(90, 95)")))
    a_ddos = [r for r in a.rows if r.label == WorkloadClass.Ddos]
    b_ddos = [r for r in b.rows if r.label == WorkloadClass.Ddos]
    assert a_ddos == b_ddos


def test_synth_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(samples_per_class=0)
    with pytest.raises(ValueError):
        synth.SynthConfig(resources_per_class=0)
    with pytest.raises(ValueError):
        synth.SynthConfig(cadence=0.0)
    with pytest.raises(ValueError):
        # more resources than rows to spread over them
        synth.SynthConfig(samples_per_class=2, resources_per_class=3)


def test_default_profile_parses_and_draws():
    profile = synth.default_profile()
    assert set(profile.classes) == set(WorkloadClass)
    ds = synth.synthesize(synth.SynthConfig(samples_per_class=8, seed=2), profile)
    assert len(ds) == 40


# --- fingerprint structure of the default corpus ----------------------------


def class_matrix(dataset, cls):
    X = dataset.feature_matrix()
    return X[dataset.labels() == int(cls)]


def test_default_ddos_incoming_bytes_band(default_dataset):
    """All Ddos traffic sits above 50.8 kB/s except the packet-loss mode."""
    ddos = class_matrix(default_dataset, WorkloadClass.Ddos)
    below = np.sum(ddos[:, 5] <= 50_800.0)
    assert below == 216  # exactly the loss sub-mode
    assert below / len(ddos) <= 0.03


def test_default_mining_outgoing_levels(default_dataset):
    """Mining outgoing traffic concentrates on three coordination plateaus."""
    mining = class_matrix(default_dataset, WorkloadClass.CryptoMining)
    out_bytes = mining[:, 7]
    for level in (70_000.0, 90_000.0, 120_000.0):
        hits = np.sum(np.abs(out_bytes - level) <= 0.05 * level)
        assert hits > 0
    assert np.all(out_bytes >= 70_000.0 * 0.95)


def test_default_cpu_marginals_overlap(default_dataset):
    """CpuIntensive and CryptoMining share CPU support (their confusion source)."""
    cpu_c = class_matrix(default_dataset, WorkloadClass.CpuIntensive)[:, 0]
    cpu_m = class_matrix(default_dataset, WorkloadClass.CryptoMining)[:, 0]
    lo = max(cpu_c.min(), cpu_m.min())
    hi = min(cpu_c.max(), cpu_m.max())
    assert lo < hi
    assert np.sum((cpu_c >= lo) & (cpu_c <= hi)) > len(cpu_c) * 0.5
    assert np.sum((cpu_m >= lo) & (cpu_m <= hi)) > len(cpu_m) * 0.5


def test_default_ddos_scatter_box_disjoint(default_dataset):
    """In (cpu, outgoing packets) space the flood mode is isolated."""
    X = default_dataset.feature_matrix()
    y = default_dataset.labels()
    ddos = X[y == int(WorkloadClass.Ddos)]
    main = ddos[ddos[:, 5] > 50_800.0]  # drop the loss sub-mode
    box = (main[:, 0].min(), main[:, 0].max(),
           main[:, 8].min(), main[:, 8].max())
    for cls in WorkloadClass:
        if cls == WorkloadClass.Ddos:
            continue
        other = X[y == int(cls)]
        overlap = (
            (other[:, 0] >= box[0]) & (other[:, 0] <= box[1])
            & (other[:, 8] >= box[2]) & (other[:, 8] <= box[3])
        )
        assert not np.any(overlap), f"{cls.name} enters the Ddos box"


# --- scatter export ---------------------------------------------------------


def test_export_scatter_round_trip(small_dataset):
    buf = io.StringIO()
    synth.export_scatter(small_dataset, "cpu_util",
                         "net_outgoing_packets_rate", buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "label,cpu_util,net_outgoing_packets_rate"
    assert len(lines) == len(small_dataset) + 1
    label, x, yv = lines[1].split(",")
    row = small_dataset.rows[0]
    assert label == row.label.name
    assert float(x) == row.sample.cpu_util
    assert float(yv) == row.sample.net_outgoing_packets_rate


def test_export_scatter_unknown_feature(small_dataset):
    with pytest.raises(ValueError):
        synth.export_scatter(small_dataset, "cpu_util", "ram", io.StringIO())
