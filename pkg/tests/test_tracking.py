import numpy as np
import pytest

from conftest import proposal, rect
from salinst.errors import ValidationError
from salinst.fusion import binarize_saliency, sequential_fuse
from salinst.model import ConfidentInstance, FlowField, FrameBundle, FusedFrame
from salinst.propagation import proposal_tags
from salinst.synth import random_config, render_video
from salinst.tracking import (ACTIVE, CLOSED, LOST, TrackEntry, TrackLedger,
                              TrackingParams, bounding_box, box_mask,
                              cosine_similarity, describe, init_identities,
                              propagate_identities, reidentify,
                              select_keyframe, track_video, unify_semantics)


def _frame(index, regions, categories=None, cls_scores=None, shape=(12, 12)):
    instances = []
    salient = np.zeros(shape, dtype=bool)
    for k, region in enumerate(regions):
        cat = categories[k] if categories else 1
        cls = cls_scores[k] if cls_scores else 0.9
        instances.append(ConfidentInstance(
            tag=k, region=region, category=cat, cls_score=cls, cs=cls))
        salient |= region
    fc = sum(i.cs for i in instances) / len(instances) if instances else 0.0
    return FusedFrame(index=index, instances=tuple(instances), fc=fc,
                      salient=salient)


class TestParams:
    def test_defaults(self):
        p = TrackingParams()
        assert p.theta_id == 0.7 and p.reid_min_sim == 0.5
        assert p.descriptor_bins == 8 and p.use_hungarian is False

    def test_theta_bounds(self):
        with pytest.raises(ValidationError):
            TrackingParams(theta_id=0.0)
        TrackingParams(theta_id=1.0)  # closed upper bound is allowed


class TestInitIdentities:
    def test_empty_frame(self):
        ledger = init_identities(_frame(0, []))
        assert ledger.records == {}
        assert ledger.next_id == 1

    def test_three_instances_get_dense_identities(self):
        regions = [rect((12, 12), 0, 0, 2, 2), rect((12, 12), 4, 4, 2, 2),
                   rect((12, 12), 8, 8, 2, 2)]
        ledger = init_identities(_frame(0, regions))
        assert sorted(ledger.records) == [1, 2, 3]
        assert ledger.identities_at(0) == {0: 1, 1: 2, 2: 3}
        assert all(r.status == ACTIVE for r in ledger.records.values())


class TestPropagateIdentities:
    def test_static_scene_carries_every_identity(self):
        regions = [rect((12, 12), 1, 1, 4, 4), rect((12, 12), 7, 7, 3, 3)]
        prev, cur = _frame(0, regions), _frame(1, regions)
        ledger = init_identities(prev)
        matches = propagate_identities(prev, cur, FlowField.zero(12, 12),
                                       TrackingParams(), ledger)
        assert matches == {0: 1, 1: 2}
        assert ledger.identities_at(1) == {0: 1, 1: 2}
        assert ledger.lost_identities() == []

    def test_exited_instance_goes_lost(self):
        regions = [rect((12, 12), 1, 1, 4, 4), rect((12, 12), 7, 7, 3, 3)]
        prev = _frame(0, regions)
        cur = _frame(1, regions[:1])
        ledger = init_identities(prev)
        propagate_identities(prev, cur, FlowField.zero(12, 12),
                             TrackingParams(), ledger)
        assert ledger.records[1].status == ACTIVE
        assert ledger.records[2].status == LOST
        assert {"frame": 1, "event": "lost", "identity": 2} in ledger.events

    def test_conflict_resolves_to_higher_overlap(self):
        # both previous identities overlap the one surviving instance;
        # the better-overlapping one claims it, the other goes lost
        shape = (3, 30)
        a = rect(shape, 0, 0, 3, 8)    # id 1
        b = rect(shape, 0, 8, 3, 8)    # id 2
        c = rect(shape, 0, 0, 3, 12)   # overlaps a (8/12) and b (4/16...)
        prev = _frame(0, [a, b], shape=shape)
        cur = _frame(1, [c], shape=shape)
        ledger = init_identities(prev)
        params = TrackingParams(theta_id=0.1)
        matches = propagate_identities(prev, cur, FlowField.zero(*shape),
                                       params, ledger)
        assert matches == {0: 1}  # iou(a, c) = 24/36 beats iou(b, c) = 12/48
        assert ledger.records[2].status == LOST

    def test_fresh_identity_for_new_instance(self):
        shape = (12, 12)
        prev = _frame(0, [rect(shape, 1, 1, 4, 4)])
        cur = _frame(1, [rect(shape, 1, 1, 4, 4), rect(shape, 7, 7, 3, 3)])
        ledger = init_identities(prev)
        propagate_identities(prev, cur, FlowField.zero(*shape),
                             TrackingParams(), ledger)
        assert ledger.identities_at(1) == {0: 1, 1: 2}
        assert ledger.records[2].born == 1

    def test_mint_fresh_off_leaves_instances_unassigned(self):
        shape = (12, 12)
        prev = _frame(0, [rect(shape, 1, 1, 4, 4)])
        cur = _frame(1, [rect(shape, 7, 7, 3, 3)])
        ledger = init_identities(prev)
        propagate_identities(prev, cur, FlowField.zero(*shape),
                             TrackingParams(), ledger, mint_fresh=False)
        assert ledger.identities_at(1) == {}
        assert ledger.untracked_positions(cur) == [0]

    def test_hungarian_beats_greedy_on_crafted_conflict(self):
        # greedy takes the single largest overlap and strands the other
        # identity; optimal assignment keeps both above the gate
        shape = (1, 60)
        a = rect(shape, 0, 9, 1, 20)    # id 1
        b = rect(shape, 0, 0, 1, 7)     # id 2
        cur1 = rect(shape, 0, 0, 1, 20)
        cur2 = rect(shape, 0, 20, 1, 20)
        prev = _frame(0, [a, b], shape=shape)
        cur = _frame(1, [cur1, cur2], shape=shape)
        flow = FlowField.zero(*shape)

        greedy = init_identities(prev)
        propagate_identities(prev, cur, flow,
                             TrackingParams(theta_id=0.2), greedy)
        assert greedy.identities_at(1) == {0: 1, 1: 3}  # id 2 stranded
        assert greedy.records[2].status == LOST

        optimal = init_identities(prev)
        propagate_identities(prev, cur, flow,
                             TrackingParams(theta_id=0.2, use_hungarian=True),
                             optimal)
        assert optimal.identities_at(1) == {0: 2, 1: 1}

    def test_warped_matching_follows_flow(self):
        shape = (8, 8)
        prev = _frame(0, [rect(shape, 2, 2, 3, 3)], shape=shape)
        cur = _frame(1, [rect(shape, 2, 4, 3, 3)], shape=shape)  # moved +2 in x
        # cur's backward flow points at the previous position
        flow = FlowField(np.full(shape, -2.0), np.zeros(shape))
        ledger = init_identities(prev)
        matches = propagate_identities(prev, cur, flow, TrackingParams(),
                                       ledger)
        assert matches == {0: 1}

    def test_duplicate_frame_assignment_rejected(self):
        ledger = init_identities(
            _frame(0, [rect((4, 4), 0, 0, 2, 2)], shape=(4, 4)))
        with pytest.raises(ValidationError, match="already"):
            ledger.record_match(1, 0, 1, TrackEntry(
                region=rect((4, 4), 2, 2, 2, 2), category=1, cls_score=0.9))


class TestSelectKeyframe:
    def _ledger_with_history(self, frame_regions):
        shape = (16, 16)
        ledger = init_identities(_frame(0, [frame_regions[0]], shape=shape))
        for f, region in enumerate(frame_regions[1:], start=1):
            ledger.record_match(1, f, 0, TrackEntry(
                region=region, category=1, cls_score=0.9))
        return ledger

    def test_single_frame(self):
        ledger = self._ledger_with_history([rect((16, 16), 0, 0, 5, 5)])
        assert select_keyframe(ledger, 1, upto_frame=10) == 0

    def test_prefers_fewer_larger_components(self):
        one_blob = rect((16, 16), 0, 0, 10, 10)              # 100 px, 1 part
        two_blobs = rect((16, 16), 0, 0, 6, 10) | \
            rect((16, 16), 8, 0, 6, 10)                      # 120 px, 2 parts
        ledger = self._ledger_with_history([two_blobs, one_blob])
        assert select_keyframe(ledger, 1, upto_frame=1) == 1  # 100 > 60

    def test_tie_resolves_to_earliest(self):
        region = rect((16, 16), 2, 2, 4, 4)
        ledger = self._ledger_with_history([region, region.copy()])
        assert select_keyframe(ledger, 1, upto_frame=5) == 0

    def test_respects_upto_frame(self):
        small = rect((16, 16), 0, 0, 3, 3)
        big = rect((16, 16), 0, 0, 10, 10)
        ledger = self._ledger_with_history([small, big])
        assert select_keyframe(ledger, 1, upto_frame=0) == 0
        assert select_keyframe(ledger, 1, upto_frame=1) == 1

    def test_unknown_identity_rejected(self):
        ledger = TrackLedger()
        with pytest.raises(ValidationError, match="unknown"):
            select_keyframe(ledger, 9, upto_frame=0)


class TestDescriptors:
    def test_bounding_box_and_mask(self):
        m = rect((10, 10), 2, 3, 4, 5)
        box = bounding_box(m)
        assert box == (3, 2, 5, 4)
        assert np.array_equal(box_mask(box, (10, 10)), m)

    def test_bounding_box_rejects_empty(self):
        with pytest.raises(ValidationError, match="empty"):
            bounding_box(np.zeros((4, 4), bool))

    def test_uniform_crop_is_one_hot(self):
        img = np.zeros((6, 6, 3), np.uint8)
        img[:, :] = (255, 0, 0)
        desc = describe(img, (1, 1, 3, 3), bins=8)
        assert desc.sum() == 1.0
        assert desc[(255 * 8 // 256) * 64] == 1.0

    def test_identical_crops_have_cosine_one(self, rng):
        img = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        a = describe(img, (0, 0, 4, 4))
        b = describe(img, (0, 0, 4, 4))
        assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_colors_have_cosine_zero(self):
        red = np.zeros((4, 4, 3), np.uint8)
        red[:, :] = (255, 0, 0)
        blue = np.zeros((4, 4, 3), np.uint8)
        blue[:, :] = (0, 0, 255)
        a = describe(red, (0, 0, 4, 4))
        b = describe(blue, (0, 0, 4, 4))
        assert cosine_similarity(a, b) == 0.0

    def test_descriptor_is_unit_norm(self, rng):
        img = rng.integers(0, 256, (9, 9, 3)).astype(np.uint8)
        desc = describe(img, (2, 3, 5, 4))
        assert np.linalg.norm(desc) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_box_rejected(self):
        img = np.zeros((4, 4, 3), np.uint8)
        with pytest.raises(ValidationError, match="degenerate"):
            describe(img, (1, 1, 0, 3))

    def test_non_intersecting_box_rejected(self):
        img = np.zeros((4, 4, 3), np.uint8)
        with pytest.raises(ValidationError, match="intersect"):
            describe(img, (10, 10, 2, 2))

    def test_zero_vector_cosine(self):
        assert cosine_similarity(np.zeros(4), np.ones(4)) == 0.0


def _colored_image(shape, region, color):
    img = np.full((*shape, 3), 128, np.uint8)
    img[region] = color
    return img


class TestReidentify:
    shape = (12, 12)

    def _lost_ledger(self, region, image):
        ledger = init_identities(_frame(0, [region], shape=self.shape))
        ledger.mark_lost(1, 1)
        rec = ledger.records[1]
        rec.keyframe = 0
        rec.query_desc = describe(image, bounding_box(region))
        return ledger

    def test_matching_appearance_restores_identity(self):
        region = rect(self.shape, 2, 2, 4, 4)
        img = _colored_image(self.shape, region, (220, 30, 30))
        ledger = self._lost_ledger(region, img)
        target = _frame(3, [region])
        pos = reidentify(1, target, img, ledger, TrackingParams())
        assert pos == 0
        assert ledger.records[1].status == ACTIVE
        assert ledger.identities_at(3) == {0: 1}
        assert {"frame": 3, "event": "reid", "identity": 1} in ledger.events

    def test_dissimilar_appearance_rejected(self):
        region = rect(self.shape, 2, 2, 4, 4)
        red = _colored_image(self.shape, region, (220, 30, 30))
        blue = _colored_image(self.shape, region, (30, 30, 220))
        ledger = self._lost_ledger(region, red)
        target = _frame(3, [region])
        assert reidentify(1, target, blue, ledger, TrackingParams()) is None
        assert ledger.records[1].status == LOST

    def test_no_untracked_candidates(self):
        region = rect(self.shape, 2, 2, 4, 4)
        img = _colored_image(self.shape, region, (220, 30, 30))
        ledger = self._lost_ledger(region, img)
        assert reidentify(1, _frame(3, []), img, ledger,
                          TrackingParams()) is None

    def test_box_overlap_gate_rejects_distant_match(self):
        region = rect(self.shape, 0, 0, 3, 3)
        img = _colored_image(self.shape, region, (220, 30, 30))
        ledger = self._lost_ledger(region, img)
        # the best-matching box is the external one over the old (red)
        # location, but no untracked instance overlaps it
        elsewhere = rect(self.shape, 8, 8, 3, 3)
        target = _frame(3, [elsewhere])
        img_far = _colored_image(self.shape, region, (220, 30, 30))
        img_far[elsewhere] = (30, 30, 220)
        pos = reidentify(1, target, img_far, ledger, TrackingParams(),
                         external_boxes=[(0, 0, 3, 3)])
        assert pos is None
        assert ledger.records[1].status == LOST

    def test_reclaims_identity_minted_earlier_in_frame(self):
        region_a = rect(self.shape, 2, 2, 4, 4)
        region_b = rect(self.shape, 7, 7, 4, 4)
        img = _colored_image(self.shape, region_a, (220, 30, 30))
        prev = _frame(0, [region_a])
        cur = _frame(1, [region_b])
        ledger = init_identities(prev)
        rec = ledger.records[1]
        rec.keyframe = 0
        rec.query_desc = describe(img, bounding_box(region_a))
        # standalone propagation minted identity 2 for the new instance
        propagate_identities(prev, cur, FlowField.zero(*self.shape),
                             TrackingParams(), ledger)
        assert ledger.identities_at(1) == {0: 2}
        img_cur = _colored_image(self.shape, region_b, (220, 30, 30))
        pos = reidentify(1, cur, img_cur, ledger, TrackingParams())
        assert pos == 0
        assert 2 not in ledger.records  # the ephemeral identity unwound
        assert ledger.identities_at(1) == {0: 1}

    def test_active_identity_rejected(self):
        region = rect(self.shape, 2, 2, 4, 4)
        ledger = init_identities(_frame(0, [region], shape=self.shape))
        with pytest.raises(ValidationError, match="not lost"):
            reidentify(1, _frame(1, [region]), np.zeros((*self.shape, 3),
                                                        np.uint8),
                       ledger, TrackingParams())


class TestUnifySemantics:
    def _ledger(self, entries):
        ledger = TrackLedger()
        region = rect((8, 8), 0, 0, 2, 2)
        ledger.new_identity(0, 0, TrackEntry(region=region,
                                             category=entries[0][0],
                                             cls_score=entries[0][1]))
        for f, (cat, score) in enumerate(entries[1:], start=1):
            ledger.record_match(1, f, 0, TrackEntry(
                region=region, category=cat, cls_score=score))
        return ledger

    def test_majority_by_summed_score(self):
        dog, cat = 12, 11
        ledger = self._ledger([(dog, 0.8)] * 9 + [(cat, 0.9)])
        assert unify_semantics(ledger) == {1: dog}  # 7.2 > 0.9

    def test_single_frame_keeps_its_category(self):
        ledger = self._ledger([(5, 0.75)])
        assert unify_semantics(ledger) == {1: 5}

    def test_tie_prefers_smaller_category_id(self):
        ledger = self._ledger([(7, 0.8), (3, 0.8)])
        assert unify_semantics(ledger) == {1: 3}

    def test_labels_rewritten_everywhere(self):
        ledger = self._ledger([(12, 0.8), (11, 0.9), (12, 0.8)])
        unify_semantics(ledger)
        rec = ledger.records[1]
        assert all(e.category == 12 for e in rec.frames.values())
        assert rec.unified_category == 12
        assert ledger.unified_categories() == {1: 12}

    def test_positive_rescaling_keeps_the_label(self):
        entries = [(4, 0.6), (9, 0.5), (4, 0.3), (9, 0.35)]
        base = unify_semantics(self._ledger(entries))
        scaled = unify_semantics(self._ledger(
            [(c, s * 0.5) for c, s in entries]))
        assert base == scaled == {1: 4}


def _synth_bundles(seed=0, noisy=False, frames=6):
    video = render_video(random_config(seed, frames=frames, noisy=noisy))
    bundles = video.bundles()
    tags = proposal_tags(bundles)
    fused = [sequential_fuse(b.proposals, binarize_saliency(b.saliency),
                             tags=t, index=b.index)
             for b, t in zip(bundles, tags)]
    return fused, bundles


class TestTrackVideo:
    def test_empty_video(self):
        assert track_video([], []).records == {}

    def test_assignments_injective_every_frame(self):
        for seed in (1, 2, 3):
            fused, bundles = _synth_bundles(seed, noisy=(seed == 2))
            ledger = track_video(fused, bundles)
            for frame, assigned in ledger.assignments.items():
                idents = list(assigned.values())
                assert len(idents) == len(set(idents)), f"frame {frame}"

    def test_no_propagation_mints_fresh_identities_per_frame(self):
        shape = (8, 8)
        a = rect(shape, 1, 1, 3, 3)
        zero = FlowField.zero(*shape)
        bundles = [
            FrameBundle(index=0, image=np.zeros((*shape, 3), np.uint8),
                        proposals=(proposal(a),), saliency=a.astype(float),
                        flow_fwd=zero),
            FrameBundle(index=1, image=np.zeros((*shape, 3), np.uint8),
                        proposals=(proposal(a),), saliency=a.astype(float),
                        flow_bwd=zero),
        ]
        fused = [sequential_fuse(b.proposals, a, index=b.index)
                 for b in bundles]
        ledger = track_video(fused, bundles, enable_propagation=False,
                             enable_reid=False)
        assert sorted(ledger.records) == [1, 2]
        assert ledger.identities_at(0) == {0: 1}
        assert ledger.identities_at(1) == {0: 2}

    def test_unified_label_constant_across_video(self):
        fused, bundles = _synth_bundles(4)
        ledger = track_video(fused, bundles)
        for rec in ledger.records.values():
            cats = {e.category for e in rec.frames.values()}
            assert cats == {rec.unified_category}

    def test_all_records_closed_after_pass(self):
        fused, bundles = _synth_bundles(5)
        ledger = track_video(fused, bundles)
        assert all(r.status == CLOSED for r in ledger.records.values())

    def test_label_maps_paint_identities(self):
        shape = (8, 8)
        a = rect(shape, 1, 1, 3, 3)
        fused = [_frame(0, [a], shape=shape)]
        bundles = [FrameBundle(index=0,
                               image=np.zeros((*shape, 3), np.uint8),
                               proposals=(), saliency=a.astype(float))]
        ledger = track_video(fused, bundles)
        maps = ledger.label_maps(1, shape)
        assert maps[0].dtype == np.uint16
        assert np.array_equal(maps[0] == 1, a)
        assert not maps[0][0, 0]
