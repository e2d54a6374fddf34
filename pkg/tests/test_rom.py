import numpy as np
import pytest

from romda.errors import ContractError, NumericError, ShapeError
from romda.numerics import Graph, Rng, ad, grad_check
from romda.rom import (
    LatentGaussian, Normalizer, RomHyper, RomModel, forecast_ensemble, kl_value, reparameterize,
    rollout, train, uq_scalar,
)
from romda.rom.checkpoint import component_bytes, from_bytes, load_model, save_model, to_bytes
from romda.rom.forecast import EnsembleForecast
from romda.rom.model import kl_standard_normal, transformer_forward
from romda.rom.train import as_trajectories, loss_graph, make_batch, window_index

MINI = dict(m=12, p_latent=2, d_h=8, n_heads=2, lookback=3, horizon=2, enc_hidden=(10, 6),
            dec_hidden=(6, 10), batch=4, epochs=3, n_ctx=2)


def _toy_corpus(m=12, T=30):
    t = np.arange(T) * 0.3
    out = []
    for xi in (90.0, 120.0):
        w = 1.0 + (xi - 90.0) / 60.0
        grid = np.linspace(0, 1, m)
        X = np.cos(w * t)[:, None] * np.sin(np.pi * grid) + 0.5 * np.sin(w * t)[:, None] * grid
        out.append((xi, X + 0.1))
    return out


@pytest.fixture(scope="module")
def mini():
    corpus = _toy_corpus()
    X = np.concatenate([c[1] for c in corpus])
    model = RomModel.create(RomHyper(**MINI), X, Rng(0))
    model.params["enc.b2"][2:] = -1.0  # visible latent noise in the check
    return model, corpus


def test_hyper_validation():
    with pytest.raises(ContractError):
        RomHyper(m=10, d_h=10, n_heads=3)
    with pytest.raises(ContractError):
        RomHyper(m=10, p_latent=0)
    h = RomHyper(**MINI)
    assert RomHyper.from_dict(h.to_dict()) == h


def test_full_loss_gradient_matches_finite_differences(mini):
    model, corpus = mini
    trajs = as_trajectories(corpus)
    normed = [model.norm.normalize(t.states) for t in trajs]
    width = model.hyper.lookback + model.hyper.horizon
    idx = window_index(trajs, width, 1)
    batch = make_batch(model, trajs, normed, [idx[0], idx[7], idx[-1]], width, Rng(5))

    def f(g, nodes):
        return loss_graph(model, g, batch, nodes=nodes)

    assert grad_check(f, model.params) < 1e-4


def test_attention_rows_sum_to_one(mini):
    model, _ = mini
    g = Graph(record=False)
    nodes = {k: g.const(v) for k, v in model.params.items()}
    keep = []
    w = g.const(Rng(1).normal((5, 3, 2)))
    transformer_forward(nodes, model.hyper, w, g.const(np.zeros((5, 1))), keep=keep)
    assert len(keep) == 2
    for a in keep:
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)
    # causal: strictly upper-triangular self-attention weights vanish
    sa = keep[0]
    assert np.all(sa[..., np.triu_indices(3, 1)[0], np.triu_indices(3, 1)[1]] == 0)


def test_no_gradient_from_future_positions(mini):
    model, _ = mini
    L = model.hyper.lookback
    for j in range(L):
        g = Graph()
        nodes = {k: g.const(v) for k, v in model.params.items()}
        win = g.param("win", Rng(2).normal((2, L, 2)))
        h = transformer_forward(nodes, model.hyper, win, g.const(np.full((2, 1), 0.3)))
        loss = ad.sum(h[:, j, :] * g.const(Rng(3).normal((2, model.hyper.d_h))))
        grad = g.backward(loss)["win"]
        assert np.all(grad[:, j + 1:, :] == 0.0)
        assert np.any(grad[:, : j + 1, :] != 0.0)


def test_kl_properties():
    rng = np.random.default_rng(0)
    assert kl_value(np.zeros(4), np.zeros(4)) == 0.0
    for _ in range(500):
        mu, lv = rng.normal(size=3), rng.normal(size=3) * 2
        val = kl_value(mu, lv)
        assert val > 0.0
        assert val == pytest.approx(0.5 * sum(np.exp(l) + m * m - 1 - l for m, l in zip(mu, lv)))
    mu, lv = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    g = Graph()
    node = kl_standard_normal(g.const(mu), g.const(lv))
    assert float(node.value) == pytest.approx(kl_value(mu, lv).mean(), rel=1e-14)


def test_normalizer_roundtrip():
    X = np.random.default_rng(1).normal(size=(40, 9)) * np.arange(1, 10) + 3.0
    X[:, 4] = 2.0  # constant feature exercises the scale floor
    n = Normalizer.fit(X)
    assert np.all(n.scale > 0)
    np.testing.assert_allclose(n.denormalize(n.normalize(X)), X, rtol=0, atol=1e-12)


def test_encode_decode_deterministic_and_checked(mini):
    model, corpus = mini
    x = corpus[0][1][3]
    a, b = model.encode(x, 90.0), model.encode(x, 90.0)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.logvar, b.logvar)
    assert np.array_equal(model.decode(a.mu, 90.0), model.decode(a.mu, 90.0))
    assert model.decode(a.mu, 90.0).shape == (12,)
    with pytest.raises(ShapeError):
        model.encode(np.ones(11), 90.0)
    with pytest.raises(ShapeError):
        model.decode(np.ones(3), 90.0)


def test_reparameterize_limits_and_moments():
    g = LatentGaussian(np.array([1.0, -2.0]), np.array([-150.0, -101.0]))
    assert np.array_equal(reparameterize(g, Rng(0)), g.mu)
    mu, lv = np.array([0.5, -1.0, 3.0]), np.array([0.3, -2.0, 1.0])
    draws = np.array([reparameterize(LatentGaussian(mu, lv), r)
                      for r in [Rng(1)] for _ in range(1)])
    rng = Rng(2)
    n = 100_000
    z = mu + np.exp(0.5 * lv) * rng.normal((n, 3))  # same rule, vectorised
    sd = np.exp(0.5 * lv)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sd / np.sqrt(n))
    assert np.all(np.abs(z.var(axis=0) / np.exp(lv) - 1) < 0.05)
    r = Rng(3)
    single = np.array([reparameterize(LatentGaussian(mu, lv), r) for _ in range(20_000)])
    assert np.all(np.abs(single.mean(axis=0) - mu) < 3 * sd / np.sqrt(20_000))
    assert np.all(np.abs(single.var(axis=0) / np.exp(lv) - 1) < 0.05)
    assert draws.shape == (1, 3)


def test_rollout_autoregression(mini):
    model, _ = mini
    w = Rng(4).normal((3, 2))
    assert rollout(model, w, 100.0, 0).shape == (0, 2)
    full = rollout(model, w, 100.0, 5)
    first = rollout(model, w, 100.0, 2)
    rest = rollout(model, np.concatenate([w, first])[-3:], 100.0, 3)
    assert np.array_equal(full, np.concatenate([first, rest]))
    with pytest.raises(ContractError):
        rollout(model, w, 100.0, -1)
    with pytest.raises(ShapeError):
        rollout(model, np.ones((4, 2)), 100.0, 1)


def test_forecast_ensemble_contract(mini):
    model, corpus = mini
    X0 = corpus[1][1][:3]
    f = forecast_ensemble(model, X0, 120.0, 4, 5, Rng(9))
    assert f.samples.shape == (7, 5, 12)
    np.testing.assert_allclose(f.mean, f.samples.mean(axis=1), rtol=0, atol=1e-12)
    assert np.all(f.variance >= 0)
    same = forecast_ensemble(model, X0, 120.0, 4, 2, [Rng(5), Rng(5)])
    assert uq_scalar(same) == 0.0
    again = forecast_ensemble(model, X0, 120.0, 4, 5, Rng(9))
    assert np.array_equal(again.samples, f.samples)
    with pytest.raises(ContractError):
        forecast_ensemble(model, X0, 120.0, 4, 1, Rng(0))


def test_uq_scalar_brute_force():
    s = np.random.default_rng(2).normal(size=(4, 6, 5))
    f = EnsembleForecast(s, 100.0)
    total = 0.0
    for t in range(4):
        for j in range(5):
            col = s[t, :, j]
            total += sum((c - col.mean()) ** 2 for c in col) / (len(col) - 1)
    assert abs(uq_scalar(f) - total / 20) < 1e-12


def test_training_reduces_loss_and_respects_freezing(mini):
    model, corpus = mini
    frozen = model.copy().freeze("transformer")
    before = component_bytes(frozen, "transformer")
    trained, hist = train(frozen, corpus, Rng(1), epochs=15, lr=3e-3)
    assert hist[-1] < hist[0]
    assert component_bytes(trained, "transformer") == before
    assert component_bytes(trained, "decoder") != component_bytes(frozen, "decoder")
    assert component_bytes(frozen, "decoder") == component_bytes(model, "decoder")  # copy, not in place


def test_freeze_all_constant_history(mini):
    model, corpus = mini
    allf = model.copy().freeze("encoder", "decoder", "transformer")
    trained, hist = train(allf, corpus, Rng(2), epochs=4)
    assert len(hist) == 5 and len(set(hist)) == 1
    for name, v in allf.params.items():
        assert trained.params[name].tobytes() == v.tobytes()


def test_linear_decoder_reaches_least_squares_optimum():
    rng = np.random.default_rng(3)
    m, T = 6, 40
    corpus = [(100.0, rng.normal(size=(T, m)) @ rng.normal(size=(m, m)))]
    hp = RomHyper(m=m, p_latent=2, d_h=4, n_heads=1, lookback=2, horizon=2, enc_hidden=(5,),
                  dec_hidden=(), beta_kl=0.0, gamma_roll=0.0, batch=10, window_stride=4,
                  lr=0.05, lr_final_ratio=0.02)
    model = RomModel.create(hp, corpus[0][1], Rng(4)).freeze("encoder", "transformer")
    model.params["enc.b1"][2:] = -400.0  # exp(-200) noise scale: z = mu
    Xn = model.norm.normalize(corpus[0][1])
    mu, _ = model.encode_batch(corpus[0][1], 100.0)
    F = np.column_stack([mu, np.full(T, (100.0 - 110.0) / 30.0), np.ones(T)])
    coef, *_ = np.linalg.lstsq(F, Xn, rcond=None)
    optimum = np.sum((Xn - F @ coef) ** 2) / T
    trained, hist = train(model, corpus, Rng(5), epochs=1500)
    assert hist[-1] >= optimum - 1e-9
    assert hist[-1] <= optimum * 1.01


def test_nan_loss_reports_epoch(mini):
    model, corpus = mini
    bad = model.copy()
    bad.params["enc.b2"][2:] = 2000.0
    with pytest.raises(NumericError, match="epoch"):
        train(bad, corpus, Rng(0), epochs=1)


def test_checkpoint_roundtrip(tmp_path, mini):
    model, _ = mini
    m = model.copy().freeze("transformer")
    path = save_model(m, tmp_path / "model.ckpt")
    back = load_model(path)
    assert back.hyper == m.hyper and back.frozen == m.frozen
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert to_bytes(back) == to_bytes(m)
    with pytest.raises(ContractError):
        from_bytes(b"XXXXXXXX" + to_bytes(m)[8:])
