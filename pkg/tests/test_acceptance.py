"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with its measured value and
runtime; the lines are repeated in the pytest terminal summary.  Run
``python3 tests/test_acceptance.py`` to get just the lines.
"""

import itertools
import json
import math
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, stats

sys.path.insert(0, str(Path(__file__).resolve().parent))

from test_theorem import listing_oracle_chain3, listing_oracle_marginal  # noqa: E402

from thermorank import artifacts  # noqa: E402
from thermorank.ingest import BoundingBox, ImageRelation, image_relation  # noqa: E402
from thermorank.radiance import (  # noqa: E402
    WIEN_B_UM_K,
    BandSpec,
    ClassRegion,
    ImagingOperator,
    SceneSpec,
    SpectralParams,
    band_radiance,
    planck_radiance,
    render_scene,
)
from thermorank.rankcore import RelationPair, rank_vector, spearman, spearman_from_values  # noqa: E402
from thermorank.stability import (  # noqa: E402
    GaussianClassPair,
    StabilityMatrix,
    closed_form_stability,
    image_stability,
    empirical_stability,
    sign_mean_stability,
)
from thermorank.theorem import (  # noqa: E402
    DetectorQuality,
    TheoremModel,
    expected_spearman,
    monte_carlo_expected_spearman,
    random_valid_pair,
    verify_theorem1,
)
from thermorank.trainer import (  # noqa: E402
    STANDARD_CONFIG,
    SurrogateDetector,
    TrainConfig,
    mispredicted_fixture,
    paired_runs,
    run_training,
)
from thermorank.weights import WeightConfig, rho_weight, rho_weight_gradient  # noqa: E402

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "thermorank" / "fixtures"
RESULTS: list[str] = []


def report(number, title, ok, detail, seconds, limit):
    ok = ok and seconds < limit
    line = f"{'PASS' if ok else 'FAIL'}  [{number}] {title}: {detail} ({seconds:.2f}s, limit {limit}s)"
    RESULTS.append(line)
    print(line)
    return ok


# --------------------------------------------------------------------------


def check_weights():
    checks = []
    checks.append(all(rho_weight(0.0, b) == 1.0 for b in (0.1, 0.5, 0.9)))
    checks.append(abs(rho_weight(1.0, 0.5) - (1 - math.log(1.5))) < 1e-6)
    checks.append(abs(rho_weight(1.0, 0.5) - 0.594535) < 1e-6)
    checks.append(abs(rho_weight(-1.0, 0.5) - 1.693147) < 1e-6)
    rng = np.random.default_rng(0)
    h = 1e-6
    fd_err = 0.0
    for _ in range(100):
        beta, rho = rng.uniform(0.05, 0.95), rng.uniform(-1 + h, 1 - h)
        fd = (rho_weight(rho + h, beta) - rho_weight(rho - h, beta)) / (2 * h)
        fd_err = max(fd_err, abs(fd - rho_weight_gradient(rho, beta)))
    checks.append(fd_err < 1e-6)
    shape_ok = True
    grid = np.arange(-1000, 1001) / 1000
    for beta in (0.3, 0.5, 0.7):
        w = np.array([rho_weight(float(r), beta) for r in grid])
        shape_ok &= bool(np.all(np.diff(w) < 0) and np.all(w[:-2] + w[2:] - 2 * w[1:-1] > 0))
    checks.append(shape_ok)
    return all(checks), f"values/FD (max err {fd_err:.1e})/monotone+convex {checks}"


def check_stability():
    rng = np.random.default_rng(7)
    s1, s2 = 0.06, 0.09
    sd = math.hypot(s1, s2)
    gaps = []
    phi_of = lambda z: abs(1 - 2 * integrate.quad(stats.norm.pdf, -np.inf, -z)[0])
    for target in (0.0, 0.38, 0.68):
        z = optimize.brentq(lambda z: phi_of(z) - target, 0, 10) if target else 0.0
        gaps.append(z)
    gaps.append(3.0)
    worst = 0.0
    for z in gaps:
        pair = GaussianClassPair(0.3 + z * sd, s1, 0.3, s2)
        emp = sign_mean_stability(rng.normal(pair.mu_k, s1, 100_000), rng.normal(pair.mu_kt, s2, 100_000))
        worst = max(worst, abs(emp - closed_form_stability(pair)))
    three = closed_form_stability(GaussianClassPair(0.3 + 3 * sd, s1, 0.3, s2))

    def matrix(vals):
        sums = np.zeros((3, 3), dtype=np.int64)
        counts = np.full((3, 3), 4, dtype=np.int64)
        for (i, j), v in vals.items():
            sums[i, j], sums[j, i] = round(4 * v), -round(4 * v)
        return StabilityMatrix((1, 2, 3), sums, counts)

    fixtures = [
        image_stability(matrix({(0, 1): 1, (0, 2): 1, (1, 2): 1}), [1, 2, 3]) == 1.0,
        image_stability(matrix({(0, 1): 0, (0, 2): 0, (1, 2): 0}), [1, 2, 3]) == 0.0,
        image_stability(matrix({(0, 1): 1, (0, 2): 0.5, (1, 2): 0}), [1, 2, 3]) == 0.5,
    ]
    # the dataset route agrees with the array route used above
    sub = np.random.default_rng(1)
    a, b = sub.normal(0.5, 0.1, 2000), sub.normal(0.48, 0.1, 2000)
    same = empirical_stability([ImageRelation(i, 0.0, {1: x, 2: y}) for i, (x, y) in enumerate(zip(a, b))]).get(1, 2) == sign_mean_stability(a, b)
    ok = worst < 0.01 and abs(three - 0.99730) < 1e-4 and all(fixtures) and same
    return ok, f"max |emp - closed| = {worst:.4f} over 4 points, 3-sigma phi = {three:.5f}, S_x fixtures {fixtures}"


def check_spearman():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        a, b = rng.permutation(10_000)[:k] / 10_000, rng.permutation(10_000)[:k] / 10_000
        ra, rb = np.argsort(np.argsort(a)) + 1.0, np.argsort(np.argsort(b)) + 1.0
        worst = max(worst, abs(spearman_from_values(a, b) - stats.pearsonr(ra, rb)[0]))
    for k in range(2, 6):
        for perm in itertools.permutations(range(k)):
            worst = max(worst, abs(spearman_from_values(range(k), perm) - np.corrcoef(range(k), perm)[0, 1]))
    ref = ImageRelation(1, 0.0, {1: 0.1, 2: 0.4, 3: 0.8})
    ident = spearman(RelationPair(ref, ref)) == 1.0
    rev = spearman(RelationPair(ref, ImageRelation(1, 0.0, {1: 0.8, 2: 0.4, 3: 0.1}))) == -1.0
    mism = RelationPair(ImageRelation(1, 0.0, {1: 0.1, 2: 0.5, 3: 0.9, 5: 0.3}), ImageRelation(1, 0.0, {2: 0.2, 3: 0.1, 4: 0.7, 5: 0.4}))
    restricted = mism.shared_classes == (2, 3, 5) and abs(spearman(mism) - (1 - 6 * 8 / 24)) < 1e-15
    ok = worst < 1e-12 and ident and rev and restricted
    return ok, f"max |rho - pearson(ranks)| = {worst:.1e}, identity/reversal/restriction {[ident, rev, restricted]}"


def _model(mus, sigmas, es):
    ids = range(1, len(mus) + 1)
    return TheoremModel(DetectorQuality(dict(zip(ids, es))), {c: (m, s) for c, m, s in zip(ids, mus, sigmas)})


def check_theorem():
    mus, sig, es = (0.1, 0.2, 0.3), (0.05,) * 3, (1, 1, 1)
    k3 = _model(mus, sig, es)
    oracle_gap = abs(expected_spearman(k3).e_rho - listing_oracle_chain3(mus, sig, es))
    marginal_gap = abs(expected_spearman(k3, "marginal").e_rho - listing_oracle_marginal(mus, sig, es))
    models = [
        k3,
        _model((0.1, 0.15, 0.3, 0.22), (0.05, 0.08, 0.04, 0.1), (0.9, 0.5, 0.7, 0.6)),
        _model((0.05, 0.1, 0.18, 0.2, 0.3), (0.04,) * 5, (0.8, 0.9, 0.6, 0.7, 1.0)),
    ]
    mc_gaps = []
    for m in models:
        est, se = monte_carlo_expected_spearman(m, 200_000, seed=11)
        mc_gaps.append((est - expected_spearman(m).e_rho) / se)
    rng = np.random.default_rng(20240601)
    violations = 0
    for n in range(100):
        m1, m2 = random_valid_pair(rng, 3 + n % 3)
        violations += not verify_theorem1(m1, m2).improved
    ok = oracle_gap < 1e-10 and marginal_gap < 1e-10 and all(abs(g) < 3 for g in mc_gaps) and violations == 0
    gaps = ", ".join(f"{g:+.2f}" for g in mc_gaps)
    return ok, (
        f"oracle gap {oracle_gap:.1e} (marginal {marginal_gap:.1e}), MC gaps k=3,4,5 [{gaps}] se, "
        f"{violations}/100 violations"
    )


def check_radiance():
    res = optimize.minimize_scalar(lambda l: -planck_radiance(l, 300.0), bounds=(1, 100), method="bounded", options={"xatol": 1e-8})
    peak_err = abs(res.x - WIEN_B_UM_K / 300.0)
    p = SpectralParams(300.0)
    a, b = band_radiance(p, BandSpec(grid_points=121)), band_radiance(p, BandSpec(grid_points=241))
    halving = abs(a - b) / b
    temps = (304.0, 297.0, 311.0)
    regions = tuple(
        ClassRegion(i, SpectralParams(t, 0.95), (BoundingBox(2 + 7 * (i - 1), 2, 5, 8, i),))
        for i, t in enumerate(temps, start=1)
    )
    spec = SceneSpec(24, 16, SpectralParams(285.0, 0.95), regions, ImagingOperator(30.0, 90.0))
    img, boxes = render_scene(spec)
    rel = image_relation(1, img, boxes)
    order_ok = rank_vector(list(rel.class_grays.items())) == rank_vector(list(enumerate(temps, start=1)))
    ok = peak_err < 0.05 and halving < 1e-4 and order_ok
    return ok, f"peak {res.x:.4f} um vs Wien {WIEN_B_UM_K / 300:.4f}, halving rel change {halving:.1e}, order kept {order_ok}"


def check_trainer():
    rng = np.random.default_rng(4)
    rels = [ImageRelation(i, 0.2, {1 + i % 3: 0.2 + rng.random() * 0.5}) for i in range(30)]
    det = SurrogateDetector.from_logits({1: (1.0, -0.5), 2: (0.2, 0.3), 3: (-1.0, 2.0)})
    neutral = WeightConfig(upsilon=1.0, eta=0.0)
    matrix = empirical_stability(rels)
    kg = run_training(rels, matrix, TrainConfig(epochs=6, weights=neutral, mode="kgat", seed=3), det)
    pl = run_training(rels, matrix, TrainConfig(epochs=6, weights=neutral, mode="plain", seed=3), det)
    neutral_ok = kg.to_csv() == pl.to_csv() and np.array_equal(kg.detector.logits, pl.detector.logits)
    frels, fdet = mispredicted_fixture(0)
    fmat = empirical_stability(frels)
    r1 = artifacts.dumps(run_training(frels, fmat, STANDARD_CONFIG, fdet).to_dict())
    r2 = artifacts.dumps(run_training(frels, fmat, STANDARD_CONFIG, fdet).to_dict())
    determinism = r1 == r2
    pairs = paired_runs(range(10), STANDARD_CONFIG)
    kgat = np.array([k for k, _ in pairs])
    plain = np.array([p for _, p in pairs])
    wins, losses = int(np.sum(kgat < plain)), int(np.sum(kgat > plain))
    pval = stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    ok = neutral_ok and determinism and kgat.mean() < plain.mean() and pval < 0.05
    return ok, (
        f"neutral {neutral_ok}, deterministic {determinism}, mean L_kn kgat {kgat.mean():.4f} < plain "
        f"{plain.mean():.4f}, wins {wins}/{wins + losses}, sign-test p = {pval:.4f}"
    )


def _cli_command():
    exe = shutil.which("thermorank")
    return [exe] if exe else [sys.executable, "-m", "thermorank.cli"]


def check_cli():
    cmd = _cli_command()
    outputs = []
    codes = []
    with tempfile.TemporaryDirectory() as tmp:
        for rnd in range(2):
            work = Path(tmp) / f"run{rnd}"
            work.mkdir()
            for name in ("scene.json", "train_config.json"):
                shutil.copy(FIXTURES / name, work)
            steps = [
                ["render", "scene.json", "--out", "render"],
                ["extract", "render/annotations.json", "render/images", "--out", "extraction.json"],
                ["stability", "extraction.json", "--out", "stability.json"],
                ["weights", "extraction.json", "extraction.json", "stability.json", "--out", "weights.json"],
                ["train", "train_config.json", "--out", "report.json"],
            ]
            for step in steps:
                proc = subprocess.run(cmd + ["--seed", "1"] + step, cwd=work, capture_output=True, text=True)
                codes.append(proc.returncode)
            files = sorted(p for p in work.rglob("*") if p.is_file() and p.name not in ("scene.json", "train_config.json"))
            outputs.append({str(p.relative_to(work)): p.read_bytes() for p in files})
        valid = True
        for name, data in outputs[0].items():
            if name.endswith(".json") and name != "render/annotations.json":
                try:
                    artifacts.validate(json.loads(data))
                except Exception:
                    valid = False
    identical = outputs[0] == outputs[1]
    ok = all(c == 0 for c in codes) and valid and identical and len(outputs[0]) > 5
    return ok, f"exit codes {sorted(set(codes))}, {len(outputs[0])} files, schema-valid {valid}, byte-identical rerun {identical}"


CRITERIA = [
    (1, "weight-function suite", check_weights, 1),
    (2, "stability suite", check_stability, 5),
    (3, "Spearman suite", check_spearman, 2),
    (4, "expected-agreement comparison suite", check_theorem, 30),
    (5, "radiance suite", check_radiance, 5),
    (6, "trainer suite", check_trainer, 60),
    (7, "CLI round-trip", check_cli, 30),
]


def _run(number):
    _, title, fn, limit = CRITERIA[number - 1]
    t0 = time.perf_counter()
    ok, detail = fn()
    return report(number, title, ok, detail, time.perf_counter() - t0, limit)


def test_criterion_1_weights():
    assert _run(1)


def test_criterion_2_stability():
    assert _run(2)


def test_criterion_3_spearman():
    assert _run(3)


def test_criterion_4_expected_agreement():
    assert _run(4)


def test_criterion_5_radiance():
    assert _run(5)


def test_criterion_6_trainer():
    assert _run(6)


def test_criterion_7_cli_round_trip():
    assert _run(7)


if __name__ == "__main__":
    results = [_run(n) for n, *_ in CRITERIA]
    sys.exit(0 if all(results) else 1)
