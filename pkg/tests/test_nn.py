import numpy as np
import pytest

from frftvit.nn import tensor as T
from frftvit.nn.checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from frftvit.nn.dnn import DnnConfig, dnn_forward, init_dnn
from frftvit.nn.gradcheck import gradcheck, numeric_grad, relative_error
from frftvit.nn.losses import TaskWeights, mae_loss, task_losses, total_loss
from frftvit.nn.optim import AdamState, adam_step, zero_grads
from frftvit.nn.tensor import GraphError, NumericalError, Tensor
from frftvit.nn.vit import (
    TASKS,
    VitConfig,
    attention,
    encoder_block,
    extract_patches,
    init_vit,
    multi_head,
    param_count,
    patch_embed,
    vit_forward,
)

TINY = VitConfig(image_size=20, channels=2, patch=10, d_model=16, n_heads=2, n_layers=1)
NARROW = DnnConfig(image_size=20, channels=2, widths=(20, 10))


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# --- tensor core -------------------------------------------------------------------


def test_backward_accumulates():
    x = leaf([1.0, -2.0, 3.0])
    y = T.sum_(T.mul(x, x))
    y.backward()
    assert np.allclose(x.grad, 2 * x.value)
    y.backward()
    assert np.allclose(x.grad, 4 * x.value)
    x.zero_grad()
    assert x.grad is None


def test_backward_errors():
    with pytest.raises(GraphError):
        Tensor([1.0]).backward()
    with pytest.raises(GraphError):
        T.mul(leaf([1.0, 2.0]), 3.0).backward()


def test_shared_subexpression_gradient():
    x = leaf(2.0)
    y = T.mul(x, x)
    z = T.add(y, y)  # 2 x^2
    z.backward()
    assert x.grad == pytest.approx(8.0)


def test_broadcast_gradients():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.arange(4.0))
    T.sum_(T.mul(a, b)).backward()
    assert np.allclose(b.grad, 3.0)
    assert np.allclose(a.grad, np.broadcast_to(np.arange(4.0), (3, 4)))


def test_division_by_tensor_rejected():
    with pytest.raises(TypeError):
        leaf(1.0) / leaf(2.0)


@pytest.mark.parametrize("op", ["gelu", "softmax", "layer_norm", "getitem", "concat", "transpose"])
def test_op_gradients(op, rng):
    x = leaf(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))
    g = leaf(rng.normal(size=5))
    b = leaf(rng.normal(size=5))

    def f():
        if op == "gelu":
            y = T.gelu(x)
        elif op == "softmax":
            y = T.softmax(x, axis=-1)
        elif op == "layer_norm":
            y = T.layer_norm(x, g, b)
        elif op == "getitem":
            y = T.getitem(x, (slice(None), [0, 2, 2]))
            return T.sum_(T.mul(y, w[:, :3]))
        elif op == "concat":
            y = T.concatenate([x, T.mul(x, 2.0)], axis=0)
            return T.sum_(T.mul(y, np.vstack([w, w])))
        else:
            y = T.transpose(x, (1, 0))
            return T.sum_(T.mul(y, w.T))
        return T.sum_(T.mul(y, w))

    errs = gradcheck(f, {"x": x, "g": g, "b": b})
    assert max(errs.values()) < 1e-6, errs


def test_batch_norm_gradient_and_running_stats(rng):
    x = leaf(rng.normal(2.0, 3.0, size=(6, 4)))
    g, b = leaf(rng.normal(size=4)), leaf(rng.normal(size=4))
    w = rng.normal(size=(6, 4))
    rm, rv = np.zeros(4), np.ones(4)
    T.batch_norm(x, g, b, rm, rv, True, momentum=1.0)
    assert np.allclose(rm, x.value.mean(axis=0))
    assert np.allclose(rv, x.value.var(axis=0, ddof=1))
    errs = gradcheck(lambda: T.sum_(T.mul(T.batch_norm(x, g, b, None, None, True), w)), {"x": x, "g": g, "b": b})
    assert max(errs.values()) < 1e-6
    with pytest.raises(ValueError):
        T.batch_norm(x.value[:1], g, b, None, None, True)


def test_layer_norm_statistics(rng):
    x = rng.normal(5.0, 4.0, size=(7, 32))
    y = T.layer_norm(x, np.ones(32), np.zeros(32)).value
    assert np.allclose(y.mean(axis=-1), 0, atol=1e-12)
    assert np.allclose(y.std(axis=-1), 1, atol=1e-5)


def test_debug_mode_flags_nonfinite():
    T.set_debug(True)
    try:
        with pytest.raises(NumericalError):
            T.mul(leaf([np.inf]), 2.0)
    finally:
        T.set_debug(False)


def test_dropout():
    x = leaf(np.ones(10000))
    assert T.dropout(x, 0.5, None, training=False) is x
    with pytest.raises(ValueError):
        T.dropout(x, 0.5, None, training=True)
    y = T.dropout(x, 0.25, np.random.default_rng(0), training=True).value
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs(y.mean() - 1) < 0.03


# --- attention ----------------------------------------------------------------------


def test_attention_zero_query_averages_values(rng):
    v = rng.normal(size=(6, 4))
    out = attention(np.zeros((3, 4)), rng.normal(size=(6, 4)), v).value
    assert np.allclose(out, v.mean(axis=0), atol=1e-12)


def test_attention_single_key(rng):
    v = rng.normal(size=(1, 4))
    out = attention(rng.normal(size=(5, 4)), rng.normal(size=(1, 4)), v).value
    assert np.allclose(out, np.repeat(v, 5, axis=0), atol=1e-12)


def test_attention_matches_direct_formula(rng):
    q, k, v = (rng.normal(size=(2, 5, 8)) for _ in range(3))
    out = attention(q, k, v).value
    for b in range(2):
        s = q[b] @ k[b].T / np.sqrt(8)
        p = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
        assert np.allclose(out[b], p @ v[b], atol=1e-12)


def test_multi_head_single_head_identity_projections(rng):
    d = 6
    x = rng.normal(size=(4, d))
    params = {f"a.{w}": Tensor(np.eye(d)) for w in ("Wq", "Wk", "Wv", "Wo")}
    params["a.bo"] = Tensor(np.zeros(d))
    out = multi_head(x, params, "a.", 1).value
    assert np.allclose(out, attention(x, x, x).value, atol=1e-12)


def test_multi_head_splits_heads(rng):
    d, h = 8, 2
    x = rng.normal(size=(1, 5, d))
    params = {f"a.{w}": Tensor(rng.normal(size=(d, d))) for w in ("Wq", "Wk", "Wv", "Wo")}
    params["a.bo"] = Tensor(rng.normal(size=d))
    out = multi_head(x, params, "a.", h).value
    q, k, v = (x[0] @ params[f"a.W{c}"].value for c in "qkv")
    dk = d // h
    heads = [attention(q[:, i * dk:(i + 1) * dk], k[:, i * dk:(i + 1) * dk], v[:, i * dk:(i + 1) * dk]).value
             for i in range(h)]
    ref = np.concatenate(heads, axis=-1) @ params["a.Wo"].value + params["a.bo"].value
    assert np.allclose(out[0], ref, atol=1e-12)


# --- encoder and embedding ------------------------------------------------------------


def test_encoder_block_zero_weights_is_identity(rng):
    p = init_vit(TINY, seed=1)
    for k, v in p.items():
        if k.startswith("layer0.") and not k.endswith(("ln1.g", "ln2.g")):
            v.value[...] = 0.0
    x = rng.normal(size=(2, TINY.n_tokens, TINY.d_model))
    assert np.allclose(encoder_block(x, p, 0, TINY).value, x, atol=1e-15)


def test_encoder_block_permutation_equivariant(rng):
    p = init_vit(TINY, seed=2)
    x = rng.normal(size=(1, TINY.n_tokens, TINY.d_model))
    perm = rng.permutation(TINY.n_tokens)
    a = encoder_block(x, p, 0, TINY).value
    b = encoder_block(x[:, perm], p, 0, TINY).value
    assert np.allclose(a[:, perm], b, atol=1e-12)


def test_positional_embedding_breaks_permutation_symmetry(rng):
    cfg = TINY
    p = init_vit(cfg, seed=3)
    img = rng.random((1, 20, 20, 2))
    # swap the two top patches
    swapped = img.copy()
    swapped[:, :10, :10], swapped[:, :10, 10:] = img[:, :10, 10:], img[:, :10, :10]
    perm = [1, 0, 2, 3]
    x = patch_embed(img, p, cfg, with_pos=False).value
    y = patch_embed(swapped, p, cfg, with_pos=False).value
    assert np.allclose(x[:, perm], y, atol=1e-12)
    xp = patch_embed(img, p, cfg).value
    yp = patch_embed(swapped, p, cfg).value
    assert not np.allclose(xp[:, perm], yp, atol=1e-6)


def test_patch_embed_zero_image_gives_positions():
    p = init_vit(TINY, seed=4)
    out = patch_embed(np.zeros((20, 20, 2)), p, TINY).value
    assert np.allclose(out[0], p["pos"].value)


def test_extract_patches_layout():
    img = np.arange(1 * 4 * 4 * 1, dtype=float).reshape(1, 4, 4, 1)
    patches = extract_patches(img, 2)
    assert patches.shape == (1, 4, 4)
    assert np.array_equal(patches[0, 1], [2, 3, 6, 7])
    assert np.array_equal(patches[0, 2], [8, 9, 12, 13])


# --- full model ---------------------------------------------------------------------------


def test_vit_forward_shape_and_determinism(rng):
    img = rng.random((3, 20, 20, 2))
    a = vit_forward(img, init_vit(TINY, seed=5), TINY).value
    b = vit_forward(img, init_vit(TINY, seed=5), TINY).value
    assert a.shape == (3, 4)
    assert np.array_equal(a, b)
    assert not np.allclose(vit_forward(2 * img, init_vit(TINY, seed=5), TINY).value, a)


def test_vit_rejects_bad_shape():
    with pytest.raises(ValueError):
        vit_forward(np.zeros((1, 30, 30, 2)), init_vit(TINY), TINY)


def test_vit_nonfinite_names_layer():
    p = init_vit(TINY)
    p["layer0.ffn.b2"].value[0] = np.inf
    with pytest.raises(NumericalError) as exc:
        vit_forward(np.zeros((1, 20, 20, 2)), p, TINY)
    assert exc.value.layer == 0


def test_vit_config_validation():
    with pytest.raises(ValueError):
        VitConfig(image_size=25, patch=10)
    with pytest.raises(ValueError):
        VitConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        VitConfig(dropout=1.0)


@pytest.mark.parametrize("cfg", [TINY, VitConfig()])
def test_param_count_matches_init(cfg):
    p = init_vit(cfg, dtype=np.float32)
    assert param_count(cfg) == sum(v.value.size for v in p.values())


def test_head_bias_initialisation():
    p = init_vit(TINY)
    for t in TASKS:
        assert p[f"head.{t}.b"].value[0] == 0.5


# --- losses ------------------------------------------------------------------------------------


def test_mae_loss():
    assert mae_loss(Tensor([1.0, -1.0, 3.0]), [0.0, 0.0, 0.0]).value == pytest.approx(5 / 3)
    with pytest.raises(ValueError):
        mae_loss(Tensor([1.0, 2.0]), [1.0])


def test_mae_subgradient_zero_at_exact_fit():
    x = leaf([1.0, 2.0])
    mae_loss(x, [1.0, 2.0]).backward()
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_total_loss_linear_in_weights():
    losses = {"cd": 1.0, "dgd": 2.0, "osnr": 3.0, "snr_nl": 4.0}
    assert total_loss(losses).value == pytest.approx(10.0)
    w = TaskWeights(cd=0.5, dgd=0.0, osnr=2.0, snr_nl=1.0)
    assert total_loss(losses, w).value == pytest.approx(0.5 + 6.0 + 4.0)
    assert total_loss([1.0, 2.0, 3.0, 4.0], w).value == pytest.approx(10.5)
    with pytest.raises(ValueError):
        total_loss([1.0, 2.0])
    with pytest.raises(ValueError):
        TaskWeights(cd=0, dgd=0, osnr=0, snr_nl=0)
    with pytest.raises(ValueError):
        TaskWeights(cd=-1.0)


def test_zero_weight_head_gets_no_gradient(rng):
    p = init_vit(TINY, seed=6)
    img, y = rng.random((2, 20, 20, 2)), rng.normal(size=(2, 4))
    w = TaskWeights(dgd=0.0)
    total_loss(task_losses(vit_forward(img, p, TINY), y), w).backward()
    assert np.all(p["head.dgd.W"].grad == 0)
    assert np.any(p["head.cd.W"].grad != 0)


# --- optimizer ------------------------------------------------------------------------------------


def test_adam_zero_gradient_no_update():
    p = {"w": leaf([1.0, 2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    assert np.array_equal(p["w"].value, [1.0, 2.0])


def test_adam_first_step_is_signed_lr():
    p = {"w": leaf([1.0, 2.0, 3.0])}
    adam_step(p, {"w": np.array([0.3, -7.0, 1e-3])}, AdamState(lr=0.01))
    assert np.allclose(p["w"].value - [1.0, 2.0, 3.0], [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_minimises_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    p = {"w": leaf(np.zeros(3))}
    state = AdamState(lr=0.05)
    for _ in range(2000):
        zero_grads(p)
        d = T.sub(p["w"], target)
        T.sum_(T.mul(d, d)).backward()
        adam_step(p, None, state)
    assert np.allclose(p["w"].value, target, atol=1e-3)
    assert state.step == 2000


def test_adam_skips_missing_gradients():
    p = {"w": leaf([1.0])}
    adam_step(p, None, AdamState())
    assert p["w"].value[0] == 1.0


# --- baseline --------------------------------------------------------------------------------------


def test_dnn_zero_weights_give_head_biases(rng):
    p, buf = init_dnn(NARROW, seed=7)
    for k, v in p.items():
        if k.endswith(".W"):
            v.value[...] = 0.0
    out = dnn_forward(rng.random((3, 20, 20, 2)), p, NARROW, buf).value
    assert np.allclose(out, 0.5)


def test_dnn_eval_needs_buffers_and_shape(rng):
    p, buf = init_dnn(NARROW)
    with pytest.raises(ValueError):
        dnn_forward(rng.random((2, 20, 20, 2)), p, NARROW)
    with pytest.raises(ValueError):
        dnn_forward(rng.random((2, 10, 10, 2)), p, NARROW, buf)
    with pytest.raises(ValueError):
        DnnConfig(widths=())


def test_dnn_training_updates_running_stats(rng):
    p, buf = init_dnn(NARROW)
    before = buf["bn.running_mean"].copy()
    dnn_forward(rng.random((4, 20, 20, 2)), p, NARROW, buf, training=True)
    assert not np.allclose(buf["bn.running_mean"], before)


# --- gradient checks ---------------------------------------------------------------------------------


def test_numeric_grad_quadratic():
    p = {"w": leaf([1.0, -3.0])}
    g = numeric_grad(lambda: float(np.sum(p["w"].value ** 2)), p, "w")
    assert np.allclose(g, [2.0, -6.0], atol=1e-8)
    assert relative_error(np.array([1e-9]), np.array([0.0])) < 1e-2
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_gradcheck_tiny_vit(rng):
    cfg = VitConfig(image_size=20, channels=2, patch=10, d_model=16, n_heads=2, n_layers=1, head_hidden=16)
    p = init_vit(cfg, seed=8)
    img, y = rng.random((2, 20, 20, 2)), rng.normal(size=(2, 4))
    errs = gradcheck(lambda: total_loss(task_losses(vit_forward(img, p, cfg), y)), p)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])


def test_gradcheck_narrow_dnn(rng):
    p, buf = init_dnn(NARROW, seed=9)
    img, y = rng.random((4, 20, 20, 2)), rng.normal(size=(4, 4))
    errs = gradcheck(lambda: total_loss(task_losses(dnn_forward(img, p, NARROW, None, training=True), y)), p)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])


# --- checkpoints ----------------------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    p = init_vit(TINY, seed=10)
    _, buf = init_dnn(NARROW)
    save_checkpoint(tmp_path / "ck", p, {"epoch": 3}, buf)
    params, buffers, meta = load_checkpoint(tmp_path / "ck")
    assert meta == {"epoch": 3}
    assert set(params) == set(p) and set(buffers) == set(buf)
    for k in p:
        assert np.array_equal(params[k], p[k].value.astype(np.float32))


def test_checkpoint_is_byte_deterministic(tmp_path):
    p = init_vit(TINY, seed=11)
    a = save_checkpoint(tmp_path / "a", p, {"x": 1})
    b = save_checkpoint(tmp_path / "b", p, {"x": 1})
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_checkpoint_detects_corruption_and_version(tmp_path):
    import json

    path = save_checkpoint(tmp_path / "ck", {"w": np.ones(3)})
    blob = path / "param.w.f32"
    raw = bytearray(blob.read_bytes())
    raw[-1] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_checkpoint(path)
    path = save_checkpoint(tmp_path / "ck2", {"w": np.ones(3)})
    m = json.loads((path / "manifest.json").read_text())
    m["version"] = CHECKPOINT_VERSION + 1
    (path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
