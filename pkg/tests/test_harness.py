import json

import numpy as np
import pytest

from rmcosgan.data import RngStream
from rmcosgan.harness import (REPORT_HEADER, ConfigError, ExperimentConfig, MetricReport, MetricRow, RunRecord,
                              SeedVariance, TrainingDiverged, cached_reference, evaluate, load_training_checkpoint,
                              make_dataset, parse_overrides, run_seed_variance, sweep_margin, sweep_sample_count,
                              train)

TINY = dict(latent_dim=4, g_layers=[4, 16, 2], d_layers=[2, 16, 1], batch_size=16, steps=30, eval_interval=10,
            eval_samples=200, reference_samples=1000, is_splits=5)


def tiny(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**TINY, **kw})


def test_config_validation_messages():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(loss="foo")
    for name in ("RMCos", "CE", "R-CE", "Ra-CE", "LS", "Ra-LS", "Hinge", "Ra-Hinge"):
        assert name in str(info.value)
    for bad in (dict(s=0.0), dict(lr=0.0), dict(batch_size=0), dict(dataset="moons"), dict(latent_dim=8),
                dict(d_layers=[2, 16, 2]), dict(steps=-1), dict(dataset="mnist", g_layers=[16, 784])):
        with pytest.raises(ConfigError):
            ExperimentConfig(**bad)


def test_config_unknown_keys_and_overrides(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig.from_dict({"lr": 1e-3, "learning_rate": 1})
    with pytest.raises(ConfigError):
        parse_overrides(["nokey"])
    assert parse_overrides(["m=0.3", "loss=LS", "g_layers=[16,8,2]"]) == {"m": 0.3, "loss": "LS",
                                                                           "g_layers": [16, 8, 2]}
    path = tiny().save(tmp_path / "c.json")
    cfg = ExperimentConfig.from_file(path, ["m=0.4"])
    assert cfg.m == 0.4 and cfg.g_layers == [4, 16, 2]
    assert cfg.hash() != tiny().hash() and tiny().hash() == tiny(out_dir="x").hash()
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "bad.json")


def test_margin_ignored_outside_rmcos():
    assert tiny(loss="LS", m=0.5).margin == 0.0 and tiny(m=0.5).margin == 0.5


def test_zero_steps_writes_initial_checkpoint_only(tmp_path):
    res = train(tiny(steps=0, out_dir=str(tmp_path)))
    assert res.report.rows == [] and res.step == 0
    assert [p.name for p in res.checkpoints] == ["checkpoint_0000000.npz"]
    assert (tmp_path / "report.csv").read_text() == ",".join(REPORT_HEADER) + "\n"


def test_training_is_deterministic():
    a, b = train(tiny()), train(tiny())
    assert a.report.deterministic_rows() == b.report.deterministic_rows()
    for p, q in zip(a.generator.parameters() + a.discriminator.parameters(),
                    b.generator.parameters() + b.discriminator.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
    c = train(tiny(seed=1))
    assert c.report.deterministic_rows() != a.report.deterministic_rows()


def test_resume_matches_uninterrupted(tmp_path):
    full = train(tiny(out_dir=str(tmp_path / "full"), checkpoint_interval=10))
    resumed = train(tiny(out_dir=str(tmp_path / "resumed")), resume=tmp_path / "full" / "checkpoint_0000020.npz")
    assert resumed.report.deterministic_rows() == full.report.deterministic_rows()[-1:]
    for p, q in zip(full.generator.parameters(), resumed.generator.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
    cfg, G, D, opt_g, opt_d, step, _ = load_training_checkpoint(tmp_path / "full" / "checkpoint_0000030.npz")
    assert step == 30 and cfg == tiny(out_dir=str(tmp_path / "full"), checkpoint_interval=10)
    assert opt_g.t == 30 and opt_d.t == 30


def test_report_files(tmp_path):
    res = train(tiny(out_dir=str(tmp_path)))
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "step,d_loss,g_loss,fid,is_mean,is_std,modes,hq_frac,wall_ms"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [10, 20, 30]
    back = MetricReport.read_csv(tmp_path / "report.csv")
    assert back.deterministic_rows() == res.report.deterministic_rows()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_evals"] == 3 and summary["diverged_at"] is None
    assert summary["best_fid"] == min(r.fid for r in res.report.rows)
    assert json.loads((tmp_path / "config.json").read_text())["steps"] == 30


def test_divergence_is_reported(tmp_path):
    with pytest.raises(TrainingDiverged) as info:
        train(tiny(loss="LS", lr=1e200, spectral_norm=False, out_dir=str(tmp_path)))
    assert info.value.step >= 1
    assert json.loads((tmp_path / "summary.json").read_text())["diverged_at"] == info.value.step


def test_report_rejects_out_of_order_rows():
    rep = MetricReport()
    rep.append(MetricRow(5, 0, 0, 0, 1, 0, 8, 1, 0))
    with pytest.raises(ValueError):
        rep.append(MetricRow(5, 0, 0, 0, 1, 0, 8, 1, 0))


def test_collapse_flag_needs_consecutive_evals():
    rep = MetricReport()
    for step, modes in enumerate([8, 2, 2, 5, 1, 2], start=1):
        rep.append(MetricRow(step, 0, 0, 0, 1, 0, modes, 1, 0))
    assert not rep.collapsed(2, 3)
    rep.append(MetricRow(7, 0, 0, 0, 1, 0, 2, 1, 0))
    assert rep.collapsed(2, 3)


def real_sampler(dataset):
    """A 'generator' that returns real samples, driven by the latent draw."""
    def G(z):
        return dataset.sample(len(z), RngStream(int(abs(z[0, 0]) * 1e6), "data")).data
    return G


def test_evaluation_noise_floor_and_untrained_gap():
    cfg = tiny()
    dataset = make_dataset(cfg)
    floor = evaluate(real_sampler(dataset), 10000, dataset, seed=3)
    assert floor.fid <= 0.05 and floor.modes == 8
    untrained = train(tiny(steps=0))
    ev = evaluate(untrained.generator, 10000, dataset, seed=3, latent_dim=4)
    assert ev.fid >= 10 * floor.fid
    again = evaluate(untrained.generator, 10000, dataset, seed=3, latent_dim=4)
    assert again == ev


def test_evaluate_checks_dimensions():
    dataset = make_dataset(tiny())
    with pytest.raises(ValueError):
        evaluate(lambda z: np.zeros((len(z), 3)), 100, dataset)
    with pytest.raises(ValueError):
        evaluate(real_sampler(dataset), 1, dataset)


def test_sample_count_sweep():
    dataset = make_dataset(tiny())
    rows = sweep_sample_count(real_sampler(dataset), [500, 500, 5000], dataset, seed=1, repeats=3)
    assert [n for n, _, _ in rows] == [500, 500, 5000]
    assert rows[0] == rows[1]
    assert all(std > 0 for _, _, std in rows)
    with pytest.raises(ValueError):
        sweep_sample_count(real_sampler(dataset), [500], dataset, repeats=0)
    with pytest.raises(ValueError):
        sweep_sample_count(real_sampler(dataset), [500, 100], dataset)
    with pytest.raises(ValueError):
        sweep_sample_count(real_sampler(dataset), [1], dataset)


def test_untrained_model_fid_falls_with_sample_count():
    dataset = make_dataset(tiny())
    monotone = 0
    for seed in range(3):
        G = train(tiny(steps=0, seed=seed)).generator
        fids = [f for _, f, _ in sweep_sample_count(G, [500, 2000, 10000], dataset, seed=seed, latent_dim=4)]
        monotone += fids[0] > fids[1] > fids[2]
    assert monotone >= 2


def test_margin_sweep_validation_and_shape():
    with pytest.raises(ValueError):
        sweep_margin(tiny(), [])
    with pytest.raises(ValueError):
        sweep_margin(tiny(loss="Hinge"), [0.1])
    with pytest.raises(ValueError):
        sweep_margin(tiny(), [1.5])
    sweep = sweep_margin(tiny(steps=20), [0.0, 0.3], seeds=[0, 1])
    assert sweep.margins() == [0.0, 0.3] and len(sweep.runs) == 4
    table = sweep.table()
    assert [row["runs"] for row in table] == [2, 2]
    assert table[0]["median_fid"] == float(np.median([r.final_fid for r in sweep.runs if r.margin == 0.0]))


def test_seed_variance_table():
    sv = run_seed_variance(tiny(steps=20), [0, 1, 2])
    assert [row["seed"] for row in sv.table()] == [0, 1, 2]
    assert all(row["best_step"] in (10, 20) for row in sv.table())
    summary = sv.summary()
    assert summary["spread"] == summary["max"] - summary["min"] and summary["spread"] > 0
    with pytest.raises(ValueError):
        run_seed_variance(tiny(), [0])


def test_seed_variance_ignores_missing_cells():
    nan = float("nan")
    sv = SeedVariance([RunRecord(0, None, 1.0, 1.0, 1.0, 10, 8, 1.0, False),
                       RunRecord(1, None, nan, nan, nan, -1, 0, nan, True, 1)])
    assert sv.summary()["spread"] == 0.0


def test_reference_cache(tmp_path):
    dataset = make_dataset(tiny())
    a = cached_reference(dataset, tmp_path / "ref.npz", 2000)
    b = cached_reference(dataset, tmp_path / "ref.npz", 2000)
    assert a.mu.tobytes() == b.mu.tobytes() and a.sigma.tobytes() == b.sigma.tobytes()
