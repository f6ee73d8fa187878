import hashlib

import numpy as np
import pytest

from helpers import tiny_config, tiny_setup
from memefuse import (FusionClassifier, HeadSpec, ModelConfig, combined_loss,
                      fuse_stage1, generate_synthetic, load_checkpoint,
                      save_checkpoint)
from memefuse.errors import ConfigError, ManifestError, SchemaVersionError, ShapeError
from memefuse.model import collate
from memefuse.textproc import BOS_ID


class TestConfigInvariants:
    def test_d_model_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=10, n_heads=4).validate()

    def test_decoder_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(decoder_dim=10, decoder_heads=4).validate()

    def test_negative_alpha(self):
        with pytest.raises(ConfigError):
            ModelConfig(alpha=-0.1).validate()

    def test_no_caption_forces_alpha_zero(self):
        cfg = ModelConfig(alpha=0.8, ablations=("no_caption",))
        assert cfg.alpha == 0.0
        cfg.validate()

    def test_unknown_ablation(self):
        with pytest.raises(ConfigError):
            ModelConfig(ablations=("no_fusion",)).validate()


class TestProjectModalities:
    def test_identity_square_projection(self):
        manifest = generate_synthetic(8, 8, n_g=2, n_x=2, seed=0)
        config = tiny_config(manifest, d_model=8)
        model = FusionClassifier(config)
        model.proj_img.W.data = np.eye(8)
        model.proj_img.b.data = np.zeros(8)
        sample = manifest.samples[0]
        img_proj, img_g, _, _ = model.project_modalities(sample)
        np.testing.assert_allclose(img_proj, sample.image_patches.astype(np.float64))
        np.testing.assert_allclose(img_g, sample.image_global.astype(np.float64))

    def test_zero_input_gives_bias(self):
        manifest, config, model, _ = tiny_setup()
        sample = manifest.samples[0]
        sample.image_patches = np.zeros_like(sample.image_patches)
        img_proj, _, _, _ = model.project_modalities(sample)
        np.testing.assert_allclose(img_proj, np.broadcast_to(
            model.proj_img.b.data, img_proj.shape))

    def test_random_input_vs_hand_oracle(self):
        manifest, config, model, _ = tiny_setup()
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, config.d_img)).astype(np.float32)
        sample = manifest.samples[0]
        sample.image_patches = x
        img_proj, _, _, _ = model.project_modalities(sample)
        W, b = model.proj_img.W.data, model.proj_img.b.data
        expected = np.array([[np.dot(x[i].astype(np.float64), W[:, j]) + b[j]
                              for j in range(config.d_model)] for i in range(2)])
        np.testing.assert_allclose(img_proj, expected, rtol=1e-12)

    def test_dim_mismatch_rejected(self):
        manifest, config, model, _ = tiny_setup()
        sample = manifest.samples[0]
        sample.image_patches = np.zeros((2, config.d_img + 1), dtype=np.float32)
        with pytest.raises(ShapeError):
            model.project_modalities(sample)

    def test_token_and_global_maps_shared_per_modality(self):
        _, _, model, _ = tiny_setup()
        assert model.proj_img is not model.proj_txt
        # the same affine weights serve patch rows and the global vector
        x = np.random.default_rng(0).standard_normal((1, model.config.d_img))
        y_tok, _ = model.proj_img.forward(x[None])
        y_glob, _ = model.proj_img.forward(x)
        np.testing.assert_array_equal(y_tok[0], y_glob)


class TestFuseStage1:
    def test_all_ones_global_is_identity(self):
        rng = np.random.default_rng(0)
        img = rng.standard_normal((4, 6))
        txt = rng.standard_normal((3, 6))
        f_img, _ = fuse_stage1(img, rng.standard_normal(6), txt, np.ones(6))
        np.testing.assert_array_equal(f_img, img)

    def test_zero_global_absorbs(self):
        rng = np.random.default_rng(1)
        img = rng.standard_normal((4, 6))
        txt = rng.standard_normal((3, 6))
        _, f_txt = fuse_stage1(img, np.zeros(6), txt, rng.standard_normal(6))
        np.testing.assert_array_equal(f_txt, np.zeros_like(txt))

    def test_direct_arithmetic(self):
        f_img, _ = fuse_stage1(np.array([[1.0, 2.0, 3.0]]), np.ones(3),
                               np.ones((1, 3)), np.array([0.5, -1.0, 2.0]))
        np.testing.assert_array_equal(f_img[0], [0.5, -2.0, 6.0])

    def test_bilinear_scaling(self):
        rng = np.random.default_rng(2)
        img = rng.standard_normal((5, 8))
        txt = rng.standard_normal((4, 8))
        img_g = rng.standard_normal(8)
        txt_g = rng.standard_normal(8)
        f_img, f_txt = fuse_stage1(img, img_g, txt, txt_g)
        f_img2, f_txt2 = fuse_stage1(img, 3.0 * img_g, txt, 3.0 * txt_g)
        np.testing.assert_allclose(f_img2, 3.0 * f_img, rtol=1e-12)
        np.testing.assert_allclose(f_txt2, 3.0 * f_txt, rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            fuse_stage1(np.ones((2, 4)), np.ones(4), np.ones((2, 4)), np.ones(5))

    def test_elementwise_oracle_many_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            d = int(rng.integers(1, 17))
            n_g = int(rng.integers(1, 5))
            n_x = int(rng.integers(1, 5))
            img = rng.standard_normal((n_g, d))
            txt = rng.standard_normal((n_x, d))
            img_g = rng.standard_normal(d)
            txt_g = rng.standard_normal(d)
            f_img, f_txt = fuse_stage1(img, img_g, txt, txt_g)
            for i in range(n_g):
                for k in range(d):
                    assert f_img[i, k] == img[i, k] * txt_g[k]
            for j in range(n_x):
                for k in range(d):
                    assert f_txt[j, k] == txt[j, k] * img_g[k]


class TestEmbedExternal:
    def test_no_persons_empty_matrix_and_sequence_length(self):
        manifest, config, model, _ = tiny_setup(n_g=3, n_x=2)
        rows = model.embed_external(np.array([], dtype=np.int64))
        assert rows.shape == (0, config.d_model)
        img_proj, img_g, txt_proj, txt_g = model.project_modalities(manifest.samples[0])
        f_img, f_txt = fuse_stage1(img_proj, img_g, txt_proj, txt_g)
        fused = model.encode(f_img, f_txt, rows)
        assert fused.tokens.shape[0] == 1 + 3 + 2

    def test_two_persons_six_rows(self):
        _, config, model, _ = tiny_setup()
        rows = model.embed_external(np.array([0, 1, 2, 1, 3, 4], dtype=np.int64))
        assert rows.shape == (6, config.d_model)

    def test_same_code_identical_rows(self):
        _, _, model, _ = tiny_setup()
        rows = model.embed_external(np.array([1, 2, 3, 1, 2, 3], dtype=np.int64))
        np.testing.assert_array_equal(rows[:3], rows[3:])

    def test_out_of_range_code_rejected(self):
        _, _, model, _ = tiny_setup()
        with pytest.raises(ShapeError):
            model.embed_external(np.array([9, 0, 0], dtype=np.int64))

    def test_blocks_use_distinct_table_regions(self):
        _, _, model, _ = tiny_setup()
        # gender 0 and race 0 are different joint rows
        a = model.embed_external(np.array([0, 0, 0], dtype=np.int64))
        assert not np.array_equal(a[0], a[1])


class TestEncode:
    def test_length_preservation(self):
        manifest, config, model, _ = tiny_setup(n_g=4, n_x=3)
        sample = manifest.samples[0]
        img_proj, img_g, txt_proj, txt_g = model.project_modalities(sample)
        f_img, f_txt = fuse_stage1(img_proj, img_g, txt_proj, txt_g)
        fused = model.encode(f_img, f_txt)
        assert fused.tokens.shape == (1 + 4 + 3, config.d_model)
        assert fused.pad_mask.all()
        assert list(fused.segment_ids[:2]) == [0, 1]

    def test_random_shape_suite(self):
        rng = np.random.default_rng(0)
        manifest = generate_synthetic(8, 6, seed=1)
        config = tiny_config(manifest, max_positions=128)
        model = FusionClassifier(config)
        for _ in range(25):
            n_g = int(rng.integers(1, 8))
            n_x = int(rng.integers(1, 8))
            n_p = int(rng.integers(0, 3))
            f_img = rng.standard_normal((n_g, config.d_model))
            f_txt = rng.standard_normal((n_x, config.d_model))
            codes = np.tile([0, 1, 2], n_p).astype(np.int64)
            ext = model.embed_external(codes)
            fused = model.encode(f_img, f_txt, ext)
            assert fused.tokens.shape[0] == 1 + n_g + n_x + 3 * n_p

    def test_max_positions_enforced(self):
        manifest, config, model, _ = tiny_setup(max_positions=6)
        f = np.zeros((4, config.d_model))
        with pytest.raises(ShapeError):
            model.encode(f, f)

    def test_attention_rows_sum_to_one(self):
        manifest, config, model, batch = tiny_setup(n=8, batch=4)
        _, cache = model.forward_batch(batch)
        for layer_cache in cache["enc_caches"]:
            probs = layer_cache[0].probs
            tmask = cache["tmask"]
            for b in range(probs.shape[0]):
                keep = tmask[b].astype(bool)
                sums = probs[b][:, keep][:, :, keep.nonzero()[0]].sum(axis=-1)
                np.testing.assert_allclose(probs[b][:, keep].sum(axis=-1), 1.0,
                                           atol=1e-5)

    def test_pad_invariance_of_r_cls(self):
        manifest = generate_synthetic(16, 6, seed=2)
        config = tiny_config(manifest)
        model = FusionClassifier(config)
        samples = manifest.samples
        # find two samples with different person counts so batching pads one
        short = next(s for s in samples if len(s.external_codes) == 0)
        long = next(s for s in samples if len(s.external_codes) == 6)
        solo, _ = model.forward_batch(collate([short], config))
        padded, _ = model.forward_batch(collate([short, long], config))
        rel = (np.linalg.norm(padded["r_cls"][0] - solo["r_cls"][0])
               / np.linalg.norm(solo["r_cls"][0]))
        assert rel < 1e-5


class TestClassify:
    def test_zero_weights_binary_half(self):
        _, config, model, _ = tiny_setup()
        model.heads["hate"].W.data[...] = 0
        model.heads["hate"].b.data[...] = 0
        scores = model.classify(np.ones(config.d_model))
        assert scores["hate"].probs == pytest.approx(0.5)

    def test_uniform_multiclass(self):
        manifest = generate_synthetic(8, 6, seed=1)
        config = tiny_config(manifest, heads=(HeadSpec("mood", "multiclass", 3),))
        for sample in manifest.samples:
            sample.labels["mood"] = 0
        model = FusionClassifier(config)
        model.heads["mood"].W.data[...] = 0
        model.heads["mood"].b.data[...] = 0
        scores = model.classify(np.ones(config.d_model))
        np.testing.assert_allclose(scores["mood"].probs, [1 / 3] * 3, rtol=1e-12)

    def test_random_r_cls_vs_affine_sigmoid_oracle(self):
        _, config, model, _ = tiny_setup()
        rng = np.random.default_rng(8)
        r_cls = rng.standard_normal(config.d_model)
        scores = model.classify(r_cls)
        W, b = model.heads["hate"].W.data, model.heads["hate"].b.data
        z = float(sum(r_cls[k] * W[k, 0] for k in range(config.d_model)) + b[0])
        assert scores["hate"].logits[0] == pytest.approx(z, rel=1e-12)
        assert scores["hate"].probs == pytest.approx(1 / (1 + np.exp(-z)), rel=1e-12)

    def test_probability_invariants(self):
        manifest = generate_synthetic(8, 6, seed=1)
        config = tiny_config(manifest, heads=(
            HeadSpec("hate", "binary"), HeadSpec("mood", "multiclass", 4)))
        model = FusionClassifier(config)
        scores = model.classify(np.random.default_rng(0).standard_normal(config.d_model))
        assert 0 < scores["hate"].probs < 1
        assert abs(scores["mood"].probs.sum() - 1) < 1e-5


class TestDecodeCaption:
    def test_memory_restricted_to_image_tokens(self):
        manifest, config, model, batch = tiny_setup(n_g=3, n_x=2)
        _, cache = model.forward_batch(batch)
        dec = cache["dec"]
        assert dec["memory"].shape[1] == 3  # exactly the n_g image positions
        probs = dec["layer_caches"][0][3].probs  # cross-attention cache
        assert probs.shape[-1] == 3

    def test_causal_logits_unchanged_by_suffix(self):
        manifest, config, model, _ = tiny_setup()
        sample = manifest.samples[0]
        out = model.forward(sample)
        r_img = out.fused_image_features
        base = np.array([BOS_ID, 4, 5, 6], dtype=np.int64)
        permuted = np.array([BOS_ID, 4, 7, 8], dtype=np.int64)
        la = model.decode_caption(r_img, base)
        lb = model.decode_caption(r_img, permuted)
        np.testing.assert_allclose(la[:2], lb[:2], atol=1e-10)
        assert not np.allclose(la[2:], lb[2:])

    def test_zeroed_cross_attention_ignores_image(self):
        manifest, config, model, _ = tiny_setup()
        for layer in model.decoder:
            layer.cross_attn.o_proj.W.data[...] = 0
            layer.cross_attn.o_proj.b.data[...] = 0
        prefix = np.array([BOS_ID, 4, 5], dtype=np.int64)
        rng = np.random.default_rng(0)
        la = model.decode_caption(rng.standard_normal((2, config.d_model)), prefix)
        lb = model.decode_caption(rng.standard_normal((2, config.d_model)), prefix)
        np.testing.assert_allclose(la, lb, atol=1e-12)

    def test_prefix_rules(self):
        manifest, config, model, _ = tiny_setup()
        r_img = np.zeros((2, config.d_model))
        with pytest.raises(ValueError):
            model.decode_caption(r_img, np.array([4, 5]))
        too_long = np.array([BOS_ID] + [4] * config.caption_max_len, dtype=np.int64)
        with pytest.raises(ShapeError):
            model.decode_caption(r_img, too_long)


class TestCombinedLoss:
    def test_alpha_zero_equals_task(self):
        manifest, config, model, batch = tiny_setup()
        out, _ = model.forward_batch(batch)
        total0, parts0 = combined_loss(out["head_logits"], batch.labels,
                                       out["caption_logits"], batch.captions, 0.0)
        assert total0 == parts0["task"]

    def test_arithmetic_composition(self):
        manifest, config, model, batch = tiny_setup()
        out, _ = model.forward_batch(batch)
        total, parts = combined_loss(out["head_logits"], batch.labels,
                                     out["caption_logits"], batch.captions, 0.2)
        assert total == pytest.approx(parts["task"] + 0.2 * parts["caption"], abs=1e-12)
        # the composition rule itself: task 0.5, caption 1.0, alpha 0.2 -> 0.7
        assert 0.5 + 0.2 * 1.0 == pytest.approx(0.7)

    def test_perfect_binary_prediction_near_zero(self):
        logits = {"hate": np.array([[40.0], [-40.0]])}
        labels = {"hate": np.array([1.0, 0.0])}
        total, parts = combined_loss(logits, labels, None, None, 0.2)
        assert parts["task"] < 1e-6

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            combined_loss({}, {}, None, None, -0.2)

    def test_additivity_over_alphas(self):
        manifest, config, model, batch = tiny_setup(n=12, batch=6)
        out, _ = model.forward_batch(batch)
        for alpha in (0.0, 0.2, 0.8):
            total, parts = combined_loss(out["head_logits"], batch.labels,
                                         out["caption_logits"], batch.captions, alpha)
            assert abs(total - parts["task"] - alpha * parts["caption"]) < 1e-7


class TestForward:
    def test_full_output_shapes(self):
        manifest, config, model, _ = tiny_setup(n_g=5, n_x=3)
        out = model.forward(manifest.samples[0])
        assert out.fused_image_features.shape == (5, config.d_model)
        assert out.r_cls.shape == (config.d_model,)
        assert out.caption_logits.shape == (4, config.caption_vocab_size)

    def test_no_external_sequence_length(self):
        manifest = generate_synthetic(8, 6, n_g=3, n_x=2, seed=1)
        config = tiny_config(manifest, ablations=("no_external",))
        model = FusionClassifier(config)
        batch = collate(manifest.samples[:4], config)
        _, cache = model.forward_batch(batch)
        assert cache["seq"].shape[1] == 1 + 3 + 2

    def test_no_stage2_mean_pool_matches_hand_oracle(self):
        manifest = generate_synthetic(16, 6, seed=3)
        config = tiny_config(manifest, ablations=("no_stage2",))
        model = FusionClassifier(config)
        batch = collate(manifest.samples[:5], config)
        out, cache = model.forward_batch(batch)
        seq, tmask = cache["seq"], cache["tmask"]
        for b in range(5):
            rows = [seq[b, t] for t in range(seq.shape[1]) if tmask[b, t]]
            expected = np.sum(rows, axis=0) / len(rows)
            np.testing.assert_allclose(out["r_cls"][b], expected, rtol=1e-10)

    def test_no_stage1_passes_projections_through(self):
        manifest = generate_synthetic(8, 6, seed=1)
        config = tiny_config(manifest, ablations=("no_stage1",))
        model = FusionClassifier(config)
        batch = collate(manifest.samples[:2], config)
        _, cache = model.forward_batch(batch)
        assert cache["f_img"] is cache["pi"]
        assert cache["f_txt"] is cache["ti"]

    def test_deterministic_inference(self):
        manifest, config, model, batch = tiny_setup()
        a, _ = model.forward_batch(batch)
        b, _ = model.forward_batch(batch)
        np.testing.assert_array_equal(a["r_cls"], b["r_cls"])


class TestCountParameters:
    def test_single_affine_count(self):
        from memefuse.layers import Affine
        layer = Affine(3, 2, np.random.default_rng(0), np.float64)
        assert sum(p.size for p in layer.parameters()) == 8

    def test_ff_dim_monotonicity(self):
        manifest = generate_synthetic(8, 6, seed=1)
        small = FusionClassifier(tiny_config(manifest, ff_dim=16))
        big = FusionClassifier(tiny_config(manifest, ff_dim=32))
        assert big.count_parameters() > small.count_parameters()

    def test_closed_form_oracle(self):
        manifest = generate_synthetic(8, 6, seed=1)
        config = tiny_config(manifest, d_model=12, n_heads=3, ff_dim=20,
                             n_layers=2, decoder_dim=8, decoder_heads=2,
                             decoder_ff=12, decoder_layers=2,
                             heads=(HeadSpec("hate", "binary"),
                                    HeadSpec("mood", "multiclass", 3)))
        for s in manifest.samples:
            s.labels["mood"] = 0
        model = FusionClassifier(config)
        d, ff = config.d_model, config.ff_dim
        dd, dff = config.decoder_dim, config.decoder_ff
        v, ext = config.caption_vocab_size, sum(config.attribute_vocab_sizes)
        expected = (
            (config.d_img * d + d) + (config.d_txt * d + d)      # projections
            + d + config.max_positions * d + 4 * d               # cls, pos, seg
            + ext * d                                            # joint attr table
            + config.n_layers * (4 * (d * d + d) + 2 * 2 * d
                                 + (d * ff + ff) + (ff * d + d))
            + (d * 1 + 1) + (d * 3 + 3)                          # heads
            + (d * dd + dd) + v * dd + config.caption_max_len * dd
            + config.decoder_layers * (8 * (dd * dd + dd) + 3 * 2 * dd
                                       + (dd * dff + dff) + (dff * dd + dd))
            + (dd * v + v)
        )
        assert model.count_parameters() == expected

    def test_breakdown_sums_to_total(self):
        _, _, model, _ = tiny_setup()
        assert sum(model.parameter_breakdown().values()) == model.count_parameters()


class TestAblationStructure:
    def test_no_caption_removes_decoder_parameters(self):
        manifest = generate_synthetic(8, 6, seed=1)
        full = FusionClassifier(tiny_config(manifest))
        ablated = FusionClassifier(tiny_config(manifest, ablations=("no_caption",),
                                               alpha=0.0))
        removed = full.count_parameters() - ablated.count_parameters()
        decoder_parts = {"mem_proj", "cap_emb", "cap_pos", "decoder", "cap_out"}
        expected = sum(c for name, c in full.parameter_breakdown().items()
                       if name in decoder_parts)
        assert removed == expected
        assert ablated.forward(manifest.samples[0]).caption_logits is None

    def test_no_external_removes_table_and_tokens(self):
        manifest = generate_synthetic(8, 6, n_g=2, n_x=2, seed=1)
        full = FusionClassifier(tiny_config(manifest))
        ablated = FusionClassifier(tiny_config(manifest, ablations=("no_external",)))
        assert "ext_emb" in full.parameter_breakdown()
        assert "ext_emb" not in ablated.parameter_breakdown()
        batch = collate(manifest.samples[:4], ablated.config)
        _, cache = ablated.forward_batch(batch)
        assert cache["seq"].shape[1] == 1 + 2 + 2

    def test_no_stage2_removes_encoder_parameters(self):
        manifest = generate_synthetic(8, 6, seed=1)
        ablated = FusionClassifier(tiny_config(manifest, ablations=("no_stage2",)))
        assert "encoder" not in ablated.parameter_breakdown()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        manifest, config, model, batch = tiny_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        clone = load_checkpoint(path)
        for (na, pa), (nb, pb) in zip(model.named_parameters(),
                                      clone.named_parameters()):
            assert na == nb
            assert pa.data.tobytes() == pb.data.tobytes()
        out_a, _ = model.forward_batch(batch)
        out_b, _ = clone.forward_batch(batch)
        np.testing.assert_array_equal(out_a["r_cls"], out_b["r_cls"])

    def test_write_read_write_hash_equality(self, tmp_path):
        _, _, model, _ = tiny_setup()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert (hashlib.sha256(p1.read_bytes()).hexdigest()
                == hashlib.sha256(p2.read_bytes()).hexdigest())

    def test_version_mismatch(self, tmp_path):
        _, _, model, _ = tiny_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes().replace(b"MEMEFUSE-CKPT 1\n", b"MEMEFUSE-CKPT 9\n", 1)
        path.write_bytes(data)
        with pytest.raises(SchemaVersionError):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        _, _, model, _ = tiny_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ManifestError):
            load_checkpoint(path)
