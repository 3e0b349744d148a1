import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnphd.association import Track
from attnphd.errors import ConfigError, DimensionMismatch, FrameOrderError, ZeroMass
from attnphd.model import AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation
from attnphd.phdtracker import (
    Heading, KalmanState, MotionEstimate, ParticleSet, PHDTracker, RefineKind, TrackerConfig,
    attention_refine, birth, direction_quotas, dump_config, kalman_correct, kalman_init,
    kalman_predict, occupancy, parse_config, phd_cardinality, predict, residual_counts,
    residual_resample, update,
)
from attnphd.synth import ScenarioSpec, TargetSpec, generate
from oracles import scalar_kalman

BOX = BBox(40, 30, 80, 60)


def detection(box=BOX, frame=0):
    return Detection(frame, ClassLabel.CAR, box, 0.9)


def grid(values):
    return AttentionGrid(np.asarray(values, dtype=float), AttentionKind.OBJECTNESS)


def pset(states, weights):
    return ParticleSet(np.asarray(states, dtype=float), np.asarray(weights, dtype=float))


# -- birth -----------------------------------------------------------------------

def test_birth_degenerate_gaussian_gives_copies(rng):
    p = birth(detection(), 100, 0.0, 0.0, rng, peak_offset=0.0)
    assert np.all(p.states == BOX.as_array())
    assert p.mass == pytest.approx(1.0, abs=1e-12)


def test_birth_count_and_weights(rng):
    p = birth(detection(), 100, 0.1, 0.05, rng)
    assert len(p) == 100 and p.states.shape == (100, 4)
    assert np.all(p.weights > 0)
    assert p.mass == pytest.approx(1.0, abs=1e-9)


def test_birth_centre_moment(rng):
    n = 100_000
    p = birth(detection(), n, 0.1, 0.05, rng)
    cx = (p.states[:, 0] + p.states[:, 2]) / 2
    cy = (p.states[:, 1] + p.states[:, 3]) / 2
    for c, want in ((cx, 60.0), (cy, 45.0)):
        se = c.std(ddof=1) / math.sqrt(n)
        assert abs(c.mean() - want) <= 3 * se


def test_birth_has_five_peaks(rng):
    p = birth(detection(), 5000, 0.01, 0.0, rng)
    cx = (p.states[:, 0] + p.states[:, 2]) / 2
    cy = (p.states[:, 1] + p.states[:, 3]) / 2
    peaks = {(60, 45), (80, 45), (40, 45), (60, 60), (60, 30)}
    for x, y in zip(cx, cy):
        assert min(math.hypot(x - px, y - py) for px, py in peaks) < 3.0


def test_birth_rejects_zero_particles(rng):
    with pytest.raises(ValueError):
        birth(detection(), 0, 0.1, 0.05, rng)


# -- predict ---------------------------------------------------------------------

def make_track(box=BOX):
    return Track(1, ClassLabel.CAR, box, history=[(0, box)])


def test_predict_no_information_returns_heaviest_prior():
    states = np.tile(BOX.as_array(), (4, 1))
    p = pset(states, [0.1, 0.2, 0.6, 0.1])
    out, box = predict(p, make_track(), grid(np.full((100, 120), 0.5)), None, TrackerConfig(), velocity=np.zeros(4))
    assert box == BOX
    assert int(np.argmax(out.weights)) == 2
    assert out.mass == pytest.approx(1.0)


def test_predict_argmax_two_particles():
    far = BBox(0, 0, 10, 10)
    p = pset([BOX.as_array(), far.as_array()], [0.5, 0.5])
    out, box = predict(p, make_track(), None, None, TrackerConfig(), velocity=np.zeros(4))
    assert box == BOX and out.weights[0] > out.weights[1]


def test_predict_ties_go_to_lowest_index():
    a, b = BBox(0, 0, 10, 10), BBox(20, 0, 30, 10)
    p = pset([a.as_array(), b.as_array()], [0.5, 0.5])
    _, box = predict(p, make_track(BBox(100, 100, 110, 110)), None, None, TrackerConfig(), velocity=np.zeros(4))
    assert box == a


def test_predict_translates_by_velocity():
    p = pset([BOX.as_array()], [1.0])
    _, box = predict(p, make_track(), None, None, TrackerConfig(), velocity=[4, -2, 0, 0])
    assert box.as_tuple() == pytest.approx((44, 28, 84, 58))


def test_predict_attention_breaks_overlap_tie():
    att = np.zeros((100, 150))
    att[30:60, 45:85] = 1.0
    left, right = BBox(35, 30, 75, 60), BBox(45, 30, 85, 60)
    p = pset([left.as_array(), right.as_array()], [0.5, 0.5])
    _, box = predict(p, make_track(), grid(att), None, TrackerConfig(), velocity=np.zeros(4))
    assert box == right


def test_constant_velocity_prediction_error():
    spec = ScenarioSpec(
        frames=200, targets=[TargetSpec(0, 200, (10, 100, 50, 140), (4.0, 0.0))],
        width=1000, height=240, seed=1,
    )
    sc = generate(spec)
    tracker = PHDTracker(TrackerConfig(seed=3))
    errors = []
    for obs in sc.observations:
        res = tracker.step_frame(obs)
        for tid, pbox in res.predicted.items():
            (_, gt_box), = sc.ground_truth[obs.frame_index]
            errors.append(math.hypot(
                (pbox.left + pbox.right - gt_box.left - gt_box.right) / 2,
                (pbox.top + pbox.bottom - gt_box.top - gt_box.bottom) / 2,
            ))
    sigma_pos = 0.1 * math.hypot(40, 40)
    assert len(errors) == 199
    assert np.mean(errors) < sigma_pos


# -- update ----------------------------------------------------------------------

def test_update_uniform_likelihood():
    p = pset(np.tile(BOX.as_array(), (3, 1)), [0.2, 0.3, 0.5])
    assert np.allclose(update(p, BOX).weights, [0.2, 0.3, 0.5], atol=1e-15)


def test_update_coinciding_particle_gains():
    far = BBox(200, 200, 210, 210)
    p = pset([BOX.as_array(), far.as_array(), far.as_array()], [1 / 3] * 3)
    w = update(p, BOX, lambda_iou=4.0).weights
    assert w[0] / w[1] >= math.exp(4.0) * (1 - 1e-12)
    assert w.sum() == pytest.approx(1.0)


def test_update_missed_decays_mass():
    p = pset(np.tile(BOX.as_array(), (4, 1)), [0.25] * 4)
    p = update(update(p, None), None)
    assert p.mass == pytest.approx(0.95 ** 2, abs=1e-15)


# -- Kalman ----------------------------------------------------------------------

def test_kalman_zero_noise_returns_measurement():
    k = kalman_predict(kalman_init(BOX, TrackerConfig()), TrackerConfig())
    z = BBox(50, 40, 94, 72)
    post = kalman_correct(k, z, noise=1e-6)
    assert post.box.as_tuple() == pytest.approx(z.as_tuple(), abs=1e-6)


def test_kalman_infinite_noise_keeps_prior():
    k = kalman_predict(kalman_init(BOX, TrackerConfig()), TrackerConfig())
    post = kalman_correct(k, BBox(50, 40, 94, 72), noise=1e9)
    assert post.mean == pytest.approx(k.mean, abs=1e-6)


def test_kalman_matches_scalar_recursion():
    q, r = 0.5, 2.0
    zs = [1.0, 2.5, 1.7, 3.2, 2.9]
    want = scalar_kalman(0.0, 1.0, q, r, zs)
    k = KalmanState(np.array([0.0]), np.array([[1.0]]))
    for z, (x, p) in zip(zs, want):
        k = KalmanState(k.mean, k.covariance + q)
        k = kalman_correct(k, [z], noise=math.sqrt(r), H=[[1.0]])
        assert k.mean[0] == pytest.approx(x, abs=1e-12)
        assert k.covariance[0, 0] == pytest.approx(p, abs=1e-12)


def test_kalman_posterior_between_prior_and_measurement():
    k = kalman_predict(kalman_init(BOX, TrackerConfig()), TrackerConfig())
    z = BBox(50, 40, 94, 72)
    post = kalman_correct(k, z)
    zc = np.array([72, 56, 44, 32])
    for prior, m, meas in zip(k.mean[:4], post.mean[:4], zc):
        assert min(prior, meas) - 1e-12 <= m <= max(prior, meas) + 1e-12


def test_kalman_covariance_stays_psd(rng):
    cfg = TrackerConfig()
    k = kalman_init(BOX, cfg)
    worst = math.inf
    for _ in range(2000):
        k = kalman_predict(k, cfg)
        cx, cy = rng.uniform(0, 500, 2)
        w, h = rng.uniform(5, 100, 2)
        k = kalman_correct(k, BBox.from_center(cx, cy, w, h), noise=rng.uniform(0.1, 10))
        assert np.array_equal(k.covariance, k.covariance.T)
        worst = min(worst, np.linalg.eigvalsh(k.covariance).min())
    assert worst >= -1e-9


# -- resampling ------------------------------------------------------------------

def test_residual_floor_arithmetic(rng):
    counts = residual_counts(np.array([0.5, 0.3, 0.2]), 10, rng)
    assert np.all(counts >= [5, 3, 2]) and counts.sum() == 10


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 30), n=st.integers(1, 200))
def test_residual_floor_guarantee(seed, m, n):
    rng = np.random.default_rng(seed)
    w = rng.random(m) ** 2 + 1e-12
    w /= w.sum()
    counts = residual_counts(w, n, rng)
    assert counts.sum() == n
    assert np.all(counts >= np.floor(n * w))


def test_degenerate_mass_single_parent(rng):
    p = pset([[0, 0, 10, 10], [50, 50, 60, 60], [90, 0, 99, 9]], [0.0, 1.0, 0.0])
    out = residual_resample(p, MotionEstimate(0, 0), rng, TrackerConfig(particles=20))
    assert len(out) == 20 and set(out.parents.tolist()) == {1}


def test_resample_zero_mass_raises(rng):
    with pytest.raises(ZeroMass):
        residual_resample(pset([[0, 0, 1, 1]], [0.0]), MotionEstimate(), rng)


def test_resample_uniform_zero_motion(rng):
    states = np.array([[i * 10, 0, i * 10 + 5, 5] for i in range(10)], dtype=float)
    out = residual_resample(pset(states, [0.1] * 10), MotionEstimate(0, 0), rng, TrackerConfig(particles=10))
    assert sorted(out.parents.tolist()) == list(range(10))
    # each offspring sits exactly one unit step from its parent
    d = out.states - states[out.parents]
    assert np.allclose(np.abs(d[:, 0]) + np.abs(d[:, 1]), 1.0)
    assert np.allclose(d[:, :2], d[:, 2:])


def test_resample_keeps_mass_and_uniform_weights(rng):
    p = pset(np.tile(BOX.as_array(), (5, 1)), [0.19, 0.19, 0.19, 0.19, 0.19])
    out = residual_resample(p, MotionEstimate(3, 1), rng, TrackerConfig(particles=100))
    assert np.allclose(out.weights, 0.95 / 100)


def test_directional_quotas(rng):
    motion = MotionEstimate(8.0, -2.0)
    assert motion.heading == Heading.E and motion.secondary == Heading.N
    q = direction_quotas(motion, TrackerConfig())
    assert q == {Heading.E: 0.5, Heading.N: 0.2, Heading.S: 0.15, Heading.W: 0.15}
    p = pset(np.tile(BOX.as_array(), (1, 1)), [1.0])
    out = residual_resample(p, motion, rng, TrackerConfig(particles=100))
    d = out.states[:, :2] - BOX.as_array()[:2]
    step = max(1.0, 0.25 * motion.speed)
    tally = {
        Heading.E: np.sum(np.isclose(d[:, 0], step)),
        Heading.W: np.sum(np.isclose(d[:, 0], -step)),
        Heading.S: np.sum(np.isclose(d[:, 1], step)),
        Heading.N: np.sum(np.isclose(d[:, 1], -step)),
    }
    assert tally == {Heading.E: 50, Heading.N: 20, Heading.S: 15, Heading.W: 15}


def test_zero_motion_quotas_are_even():
    assert set(direction_quotas(MotionEstimate(), TrackerConfig()).values()) == {0.25}


# -- attention refinement --------------------------------------------------------

def active_grid(n_active, size=10, shape=(40, 40), origin=(10, 10)):
    g = np.zeros(shape)
    r0, c0 = origin
    idx = [(r0 + i // size, c0 + i % size) for i in range(n_active)]
    for r, c in idx:
        g[r, c] = 1.0
    return grid(g)


BOX10 = BBox(10, 10, 20, 20)


def test_refine_full_occupancy_keeps():
    out = attention_refine(BOX10, active_grid(100))
    assert out.kind == RefineKind.KEEP and out.occupancy == 1.0 and out.box == BOX10


def test_refine_zero_occupancy_rejects():
    out = attention_refine(BOX10, active_grid(0))
    assert out.kind == RefineKind.REJECT and out.box is None


def test_refine_boundary_inclusive():
    assert occupancy(BOX10, active_grid(30)) == 0.3
    assert attention_refine(BOX10, active_grid(30)).kind == RefineKind.KEEP
    assert attention_refine(BOX10, active_grid(29)).kind == RefineKind.CORRECTED


def test_refine_correction_recentres_and_clamps_size():
    g = np.zeros((60, 60))
    g[18:22, 20:24] = 1.0  # active blob overlapping the box corner
    out = attention_refine(BBox(20, 20, 30, 30), grid(g))
    assert out.kind == RefineKind.CORRECTED
    # 4x4 blob clamped up to 0.8 of the predicted size, centred on the blob
    assert out.box.width == pytest.approx(8.0) and out.box.height == pytest.approx(8.0)
    assert ((out.box.left + out.box.right) / 2, (out.box.top + out.box.bottom) / 2) == pytest.approx((22, 20))


def test_refine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        attention_refine(BOX10, active_grid(100), frame_size=(80, 40))


_RANK = {RefineKind.REJECT: 0, RefineKind.CORRECTED: 1, RefineKind.KEEP: 2}


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), grow=st.integers(1, 60))
def test_refine_monotone_in_active_region(seed, grow):
    rng = np.random.default_rng(seed)
    base = rng.random((30, 30)) < rng.uniform(0, 0.3)
    bigger = base.copy()
    extra = rng.integers(0, 30, (grow, 2))
    bigger[extra[:, 0], extra[:, 1]] = True
    box = BBox(*rng.uniform(0, 10, 2), *rng.uniform(15, 30, 2))
    a = attention_refine(box, grid(base.astype(float)))
    b = attention_refine(box, grid(bigger.astype(float)))
    assert _RANK[b.kind] >= _RANK[a.kind]


# -- cardinality -----------------------------------------------------------------

def test_cardinality_examples(rng):
    ones = [pset(np.zeros((4, 4)), [0.25] * 4) for _ in range(3)]
    assert phd_cardinality(ones) == 3.0
    pair = [ones[0], update(ones[1], None)]
    assert phd_cardinality(pair) == pytest.approx(1.95, abs=1e-15)
    sets = [pset(np.zeros((n, 4)), rng.random(n)) for n in (3, 7, 11)]
    assert phd_cardinality(sets) == pytest.approx(math.fsum(w for s in sets for w in s.weights), abs=1e-12)


# -- config ----------------------------------------------------------------------

def test_parse_config_overrides():
    cfg = parse_config("# tuned\nparticles = 50\nsurvival=0.9  # decay\nrefine = off\n")
    assert cfg.particles == 50 and cfg.survival == 0.9 and cfg.refine is False
    assert cfg.lambda_iou == 4.0


def test_config_round_trip():
    cfg = TrackerConfig(particles=37, tau_bin=0.25, seed=9, use_attention=False)
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "particles = many", "particles", "refine = maybe", "particles = 0",
                                  "quota_dominant = 0.9"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- full pipeline ---------------------------------------------------------------

def one_target(frames=30, **kw):
    return generate(ScenarioSpec(frames=frames, targets=[TargetSpec(0, frames, (20, 40, 60, 80), (2.0, 1.0))], **kw))


def test_empty_stream():
    tracker = PHDTracker()
    results = tracker.run([FrameObservation(k, [], None, None) for k in range(5)])
    assert all(not r.records for r in results) and not tracker.tracks


def test_single_noiseless_target():
    sc = one_target()
    tracker = PHDTracker(TrackerConfig(seed=1))
    for obs in sc.observations:
        res = tracker.step_frame(obs)
        (_, gt_box), = sc.ground_truth[obs.frame_index]
        assert [(r.track_id, r.bbox) for r in res.records] == [(1, gt_box)]
        assert all(len(s) == 100 for s in tracker.particle_sets)
        assert tracker.cardinality() == pytest.approx(len(tracker.tracks), abs=1e-9)


def test_dropout_over_saturated_attention_keeps_identity():
    sc = one_target(frames=40, dropout_every=10)
    tracker = PHDTracker(TrackerConfig(seed=1))
    ids = set()
    for obs in sc.observations:
        res = tracker.step_frame(obs)
        assert not res.terminated
        ids.update(r.track_id for r in res.records)
        if not obs.detections:
            assert res.refine[1] == RefineKind.KEEP
    assert ids == {1}


def test_tracker_deterministic_for_seed():
    sc = generate(ScenarioSpec(
        frames=40, targets=[TargetSpec(0, 40, (20, 40, 60, 80), (2.0, 1.0)), TargetSpec(5, 40, (200, 100, 230, 150), (-1, 0))],
        miss=0.2, clutter=0.5, noise=1.0, seed=4,
    ))
    runs = []
    for _ in range(2):
        tr = PHDTracker(TrackerConfig(seed=11))
        runs.append([r for o in sc.observations for r in tr.step_frame(o).records])
    assert runs[0] == runs[1]


def test_frame_order_enforced():
    tracker = PHDTracker()
    tracker.step_frame(FrameObservation(0, [], None, None))
    with pytest.raises(FrameOrderError):
        tracker.step_frame(FrameObservation(2, [], None, None))
