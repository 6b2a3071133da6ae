import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oiaedl.nn import Rng
from oiaedl.scenesim import (
    ACTIONS,
    EXPLANATIONS,
    LANE_STATES,
    LIGHTS,
    OBSTACLES,
    TURNING,
    DatasetError,
    GeneratorConfig,
    LatentScene,
    PerturbationSpec,
    SceneSample,
    corrupt,
    feature_stats,
    generate_dataset,
    generate_scenes,
    label_oracle,
    perturb,
    perturb_heavy,
    random_perturbation,
    read_dataset,
    render_features,
    sample_scene,
    split_samples,
    write_dataset,
)

E = {name: i for i, name in enumerate(EXPLANATIONS)}
F, S, L, R = range(4)

latent_scenes = st.builds(
    LatentScene,
    light=st.sampled_from(LIGHTS),
    front_obstacle=st.sampled_from(OBSTACLES),
    stop_sign=st.booleans(),
    lead_vehicle=st.booleans(),
    left_state=st.sampled_from(LANE_STATES),
    right_state=st.sampled_from(LANE_STATES),
    front_car_turning=st.sampled_from(TURNING),
    illumination=st.floats(0.2, 1.0),
    n_distractors=st.integers(0, 6),
)


def small_config(**kw):
    base = dict(seed=3, n_train=40, n_val=10, n_test=10)
    base.update(kw)
    return GeneratorConfig(**base)


def reference_labels(sc):
    """Rule table written out independently of the implementation."""
    stop = sc.light == "red" or sc.front_obstacle != "none" or sc.stop_sign
    free = {"open_turn_lane", "clear"}
    left = (sc.left_state in free and sc.light != "red") or (
        sc.front_car_turning == "left" and sc.left_state in free)
    right = (sc.right_state in free and sc.light != "red") or (
        sc.front_car_turning == "right" and sc.right_state in free)
    bits = {
        "follow_traffic": not stop and sc.lead_vehicle,
        "road_clear": not stop and not sc.lead_vehicle,
        "green_light": sc.light == "green",
        "obstacles": sc.front_obstacle != "none",
        "red_light": sc.light == "red",
        "traffic_sign": sc.stop_sign,
        "front_car_turn_left": sc.front_car_turning == "left",
        "on_left_turn_lane": sc.left_state == "open_turn_lane",
        "left_traffic_allows": left and sc.light == "green",
        "obstacles_on_left": sc.left_state == "obstacle",
        "no_lane_on_left": sc.left_state == "no_lane",
        "solid_lane_on_left": sc.left_state == "solid_line",
        "front_car_turn_right": sc.front_car_turning == "right",
        "on_right_turn_lane": sc.right_state == "open_turn_lane",
        "right_traffic_allows": right and sc.light == "green",
        "obstacles_on_right": sc.right_state == "obstacle",
        "no_lane_on_right": sc.right_state == "no_lane",
        "solid_lane_on_right": sc.right_state == "solid_line",
    }
    expl = [int(bits.get(n, False)) for n in EXPLANATIONS]
    return [int(not stop), int(stop), int(left), int(right)], expl


class TestLabelOracle:
    def test_red_light(self):
        a, e = label_oracle(LatentScene(light="red"))
        assert a[S] == 1 and a[F] == 0 and e[E["red_light"]] == 1

    def test_pedestrian(self):
        a, e = label_oracle(LatentScene(front_obstacle="pedestrian"))
        assert a[S] == 1 and e[E["obstacles"]] == 1

    def test_solid_line_left(self):
        a, e = label_oracle(LatentScene(left_state="solid_line", light="green"))
        assert a[L] == 0 and a[F] == 1 and e[E["solid_lane_on_left"]] == 1

    def test_turning_car_opens_left_under_red(self):
        a, _ = label_oracle(LatentScene(light="red", front_car_turning="left"))
        assert a[L] == 1 and a[R] == 0

    def test_schema(self):
        a, e = label_oracle(LatentScene())
        assert a.shape == (len(ACTIONS),) and e.shape == (21,)
        assert a.dtype == np.int8

    @settings(max_examples=300, deadline=None)
    @given(latent_scenes)
    def test_matches_reference_table(self, sc):
        a, e = label_oracle(sc)
        ra, re = reference_labels(sc)
        assert a.tolist() == ra and e.tolist() == re

    @settings(max_examples=300, deadline=None)
    @given(latent_scenes)
    def test_forward_stop_exclusive(self, sc):
        a, e = label_oracle(sc)
        assert a[F] + a[S] == 1
        assert not e[18:].any()


class TestSampleScene:
    def test_deterministic(self):
        cfg = GeneratorConfig()
        assert sample_scene(Rng(42).stream(0), cfg) == sample_scene(Rng(42).stream(0), cfg)

    def test_degenerate_prior(self):
        cfg = GeneratorConfig()
        cfg.priors["light"] = {"none": 0.0, "green": 0.0, "red": 1.0}
        rng = Rng(1).stream(0)
        assert all(sample_scene(rng, cfg).light == "red" for _ in range(200))

    def test_red_frequency(self):
        cfg = GeneratorConfig()
        rng = Rng(2024).stream("freq")
        reds = sum(sample_scene(rng, cfg).light == "red" for _ in range(10_000))
        assert abs(reds / 10_000 - cfg.priors["light"]["red"]) <= 0.02

    @pytest.mark.parametrize("table", [{"none": 0.5, "green": 0.6, "red": -0.1},
                                       {"none": 0.5, "green": 0.2, "red": 0.2},
                                       {"blue": 1.0}])
    def test_invalid_prior(self, table):
        cfg = GeneratorConfig()
        cfg.priors["light"] = table
        with pytest.raises(ValueError):
            cfg.validate()

    def test_invalid_latent(self):
        with pytest.raises(ValueError):
            LatentScene(illumination=0.1)
        with pytest.raises(ValueError):
            LatentScene(light="amber")


class TestRender:
    def test_single_red_light(self):
        s = render_features(LatentScene(light="red"), Rng(0).stream(0), GeneratorConfig())
        assert s.n_regions == 1
        assert s.causal_regions["stop"] == 0 and s.causal_regions["red_light"] == 0

    def test_shapes_and_causal_indices(self):
        for _, s in generate_scenes(small_config()):
            assert s.regions.shape[1] == 16 and s.global_features.shape == (32,)
            assert s.n_regions >= 1
            for name, bit in zip(ACTIONS + EXPLANATIONS, np.concatenate([s.actions, s.explanations])):
                if bit:
                    assert 0 <= s.causal_regions[name] <= s.n_regions
                else:
                    assert name not in s.causal_regions

    def test_causal_region_encodes_entity(self):
        # obstacle outranks the light when both force a stop
        sc = LatentScene(light="red", front_obstacle="car", n_distractors=3)
        s = render_features(sc, Rng(5).stream(1), GeneratorConfig())
        row = s.regions[s.causal_regions["stop"]]
        assert int(np.argmax(row[:8])) == 1  # obstacle type slot
        row = s.regions[s.causal_regions["red_light"]]
        assert int(np.argmax(row[:8])) == 0

    def test_deterministic(self):
        sc = LatentScene(light="green", lead_vehicle=True, n_distractors=4)
        a = render_features(sc, Rng(9).stream(3), GeneratorConfig())
        b = render_features(sc, Rng(9).stream(3), GeneratorConfig())
        assert a == b

    def test_zero_jitter_same_up_to_order(self):
        cfg = GeneratorConfig(jitter=0.0)
        sc = LatentScene(light="green", stop_sign=True, left_state="no_lane", n_distractors=5)
        a = render_features(sc, Rng(1).stream(0), cfg)
        b = render_features(sc, Rng(2).stream(0), cfg)
        key = lambda m: m[np.lexsort(m.T[::-1])]  # noqa: E731
        np.testing.assert_array_equal(key(a.regions), key(b.regions))

    def test_empty_scene_gets_background_region(self):
        s = render_features(LatentScene(), Rng(0).stream(0), GeneratorConfig())
        assert s.n_regions == 1
        assert s.causal_regions["forward"] == 1  # the global slot

    def test_illumination_scaling(self):
        cfg = GeneratorConfig(jitter=0.0)
        s = render_features(LatentScene(light="red", illumination=0.5), Rng(0).stream(0), cfg)
        assert s.regions.max() == 0.5
        assert s.global_features[16] == 0.5


class TestDataset:
    def test_split_sizes(self):
        data = generate_dataset(small_config())
        assert [len(split_samples(data, k)) for k in ("train", "val", "test")] == [40, 10, 10]
        assert [s.id for s in data] == list(range(60))

    def test_oracle_consistency(self):
        for sc, s in generate_scenes(small_config(n_train=300)):
            ra, re = reference_labels(sc)
            assert s.actions.tolist() == ra and s.explanations.tolist() == re

    def test_byte_identical_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_dataset(generate_dataset(small_config()), a)
        write_dataset(generate_dataset(small_config()), b)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_data(self):
        a = generate_dataset(small_config(seed=1))
        b = generate_dataset(small_config(seed=2))
        assert any(x != y for x, y in zip(a, b))

    def test_config_flat_round_trip(self, tmp_path):
        cfg = small_config(jitter=0.1)
        path = tmp_path / "gen.json"
        path.write_text(json.dumps(cfg.to_flat()))
        assert GeneratorConfig.load(path).to_flat() == cfg.to_flat()

    def test_unknown_config_key(self):
        with pytest.raises(ValueError):
            GeneratorConfig.from_flat({"colour": 3})


class TestPerturb:
    @pytest.fixture
    def sample(self):
        return generate_dataset(small_config())[7]

    @pytest.mark.parametrize("spec", [PerturbationSpec("brightness", 0.0),
                                      PerturbationSpec("contrast", 1.0),
                                      PerturbationSpec("noise", 0.0),
                                      PerturbationSpec("channel_scale", 0.0)])
    def test_identity_magnitudes(self, sample, spec):
        out = perturb(sample, spec)
        np.testing.assert_allclose(out.regions, sample.regions, atol=1e-15)
        np.testing.assert_allclose(out.global_features, sample.global_features, atol=1e-15)

    def test_brightness_shift(self, sample):
        out = perturb(sample, PerturbationSpec("brightness", 0.1))
        np.testing.assert_allclose(out.regions - sample.regions, 0.1)

    def test_magnitude_clamped(self, sample):
        a = perturb(sample, PerturbationSpec("brightness", 5.0))
        np.testing.assert_allclose(a.regions - sample.regions, 0.2)
        b = perturb(sample, PerturbationSpec("contrast", 3.0))
        c = perturb(sample, PerturbationSpec("contrast", 1.25))
        np.testing.assert_array_equal(b.regions, c.regions)

    def test_contrast_keeps_vector_mean(self, sample):
        out = perturb(sample, PerturbationSpec("contrast", 0.8))
        np.testing.assert_allclose(out.regions.mean(axis=1), sample.regions.mean(axis=1), atol=1e-14)

    def test_channel_scale_range(self, sample):
        out = perturb(sample, PerturbationSpec("channel_scale", 0.1, seed=3))
        ratio = out.global_features[sample.global_features != 0] / sample.global_features[
            sample.global_features != 0]
        assert np.all((ratio >= 0.9) & (ratio <= 1.1))

    def test_noise_reproducible_and_labels_kept(self, sample):
        spec = PerturbationSpec("noise", 0.05, seed=4, stream=(1,))
        a, b = perturb(sample, spec), perturb(sample, spec)
        assert a == b
        assert not np.array_equal(a.regions, sample.regions)
        np.testing.assert_array_equal(a.actions, sample.actions)
        np.testing.assert_array_equal(a.explanations, sample.explanations)
        assert a.causal_regions == sample.causal_regions

    def test_normalize(self):
        data = generate_dataset(small_config())
        stats = feature_stats(data)
        out = [perturb(s, PerturbationSpec("normalize", stats=stats)) for s in data]
        regions = np.concatenate([s.regions for s in out])
        np.testing.assert_allclose(regions.mean(axis=0), 0.0, atol=1e-12)
        with pytest.raises(ValueError):
            perturb(data[0], PerturbationSpec("normalize"))

    def test_unknown_family(self, sample):
        with pytest.raises(ValueError):
            perturb(sample, PerturbationSpec("blur", 1.0))

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(["brightness", "contrast", "channel_scale", "noise"]),
           st.integers(0, 2**31 - 1))
    def test_label_invariance(self, family, seed):
        s = generate_dataset(small_config())[seed % 60]
        spec = random_perturbation(family, np.random.default_rng(seed), seed)
        out = perturb(s, spec)
        np.testing.assert_array_equal(out.actions, s.actions)
        np.testing.assert_array_equal(out.explanations, s.explanations)
        assert out.causal_regions == s.causal_regions

    def test_heavy(self, sample):
        a = perturb_heavy(sample, np.random.default_rng(0), seed=1, stream=(2,))
        b = perturb_heavy(sample, np.random.default_rng(0), seed=1, stream=(2,))
        assert a == b
        assert not np.allclose(a.regions, sample.regions)
        np.testing.assert_array_equal(a.actions, sample.actions)


class TestCorrupt:
    @pytest.fixture
    def sample(self):
        return render_features(LatentScene(light="red", stop_sign=True, n_distractors=4),
                               Rng(0).stream(0), GeneratorConfig())

    def test_severity_zero(self, sample):
        out = corrupt(sample, 0.0, np.random.default_rng(0))
        assert out == sample and not out.corrupted

    def test_severity_one_replaces_every_region(self, sample):
        out = corrupt(sample, 1.0, np.random.default_rng(0))
        assert out.corrupted
        assert not np.any(np.isclose(out.regions, 0.5 * sample.regions))
        np.testing.assert_array_equal(out.actions, sample.actions)
        assert out.global_features[16] == pytest.approx(0.5 * sample.global_features[16])

    def test_partial(self, sample):
        out = corrupt(sample, 0.5, np.random.default_rng(1))
        darkened = 0.75 * sample.regions
        kept = sum(np.any(np.all(r == darkened, axis=1)) for r in out.regions)
        assert kept == sample.n_regions - round(0.5 * sample.n_regions)

    def test_noise_scale(self):
        s = SceneSample(0, np.zeros((4000, 16)), np.zeros(32), np.zeros(4, np.int8), np.zeros(21, np.int8))
        out = corrupt(s, 1.0, np.random.default_rng(3))
        # darkened by 0.5, unit expected squared norm before that
        assert np.mean(np.sum(out.regions ** 2, axis=1)) == pytest.approx(0.25, rel=0.03)

    @pytest.mark.parametrize("severity", [-0.1, 1.5])
    def test_bad_severity(self, sample, severity):
        with pytest.raises(ValueError):
            corrupt(sample, severity, np.random.default_rng(0))


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        data = generate_dataset(small_config(n_train=80, n_val=10, n_test=10))
        data[3] = corrupt(data[3], 0.5, np.random.default_rng(0))
        path = tmp_path / "d.jsonl"
        write_dataset(data, path)
        back = read_dataset(path)
        assert len(back) == 100 and all(a == b for a, b in zip(data, back))
        assert back[3].corrupted

    def test_truncated_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(generate_dataset(small_config(n_train=3, n_val=0, n_test=0)), path)
        text = path.read_text()
        path.write_text(text[: len(text) - 40])
        with pytest.raises(DatasetError, match=":3:"):
            read_dataset(path)

    def test_wrong_dimension(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(generate_dataset(small_config(n_train=2, n_val=0, n_test=0)), path)
        with pytest.raises(DatasetError, match="dim"):
            read_dataset(path, region_feature_dim=8)

    def test_inconsistent_dimension(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(generate_dataset(small_config(n_train=2, n_val=0, n_test=0)), path)
        first, second = path.read_text().splitlines()
        rec = json.loads(second)
        rec["regions"] = [r[:8] for r in rec["regions"]]
        path.write_text(first + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(DatasetError, match=":2: region feature dim 8"):
            read_dataset(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({"id": 0}) + "\n")
        with pytest.raises(DatasetError, match="missing"):
            read_dataset(path)
