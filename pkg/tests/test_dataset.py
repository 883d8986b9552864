import numpy as np
import pytest
import torch

from omniqa.dataset import (MANIFEST_COLUMNS, DatasetRecord, OmniIQADataset, PatchDataset, collate,
                            image_tensor, load_manifest, prepare_image, write_manifest)
from omniqa.dataset_manager import SyntheticDatasetManager, SyntheticSpec
from omniqa.model import ModelConfig
from omniqa.utils.errors import DataError
from omniqa.viewpoint import DetectorConfig

MODEL_CFG = ModelConfig(viewport_size=32, erp_height=64, width_divisor=16)
DETECTOR_CFG = DetectorConfig(n_viewpoints=6, d_th=30.0)


def write_csv(path, text):
    path.write_text(text)
    return str(path)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        records = [DatasetRecord(str(tmp_path / 'a.png'), 'r1', 'blur', 2, 6.4123456789012345),
                   DatasetRecord(str(tmp_path / 'sub' / 'b.png'), 'r2', 'none', 0, 10.0)]
        path = str(tmp_path / 'm.csv')
        write_manifest(path, records)
        assert open(path).readline().strip() == ','.join(MANIFEST_COLUMNS)
        assert load_manifest(path, check_images=False).records == records

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / 'm.csv', 'image_path,ref_id,distortion_type,level\na.png,r,blur,1\n')
        with pytest.raises(DataError, match='mos'):
            load_manifest(path, check_images=False)

    @pytest.mark.parametrize('row', ['a.png,r,blur,1,good', 'a.png,r,blur,9,5', 'a.png,r,fog,1,5',
                                     'a.png,r,blur,1,nan'])
    def test_bad_row_names_the_line(self, tmp_path, row):
        path = write_csv(tmp_path / 'm.csv', ','.join(MANIFEST_COLUMNS) + '\nb.png,r,blur,1,5\n' + row + '\n')
        with pytest.raises(DataError, match=':3:'):
            load_manifest(path, check_images=False)

    def test_missing_image(self, tmp_path):
        path = write_csv(tmp_path / 'm.csv', ','.join(MANIFEST_COLUMNS) + '\nnope.png,r,blur,1,5\n')
        with pytest.raises(DataError, match='not found'):
            load_manifest(path)

    def test_duplicates_are_kept(self, tmp_path, caplog):
        path = write_csv(tmp_path / 'm.csv',
                         ','.join(MANIFEST_COLUMNS) + '\na.png,r,blur,1,5\na.png,r,blur,1,5\n')
        assert len(load_manifest(path, check_images=False)) == 2
        assert 'duplicate' in caplog.text

    def test_subset_and_mos(self, synthetic_db):
        m = load_manifest(synthetic_db)
        assert m.ref_ids() == ['ref00', 'ref01', 'ref02', 'ref03']
        sub = m.subset(['ref01'])
        assert len(sub) == 10
        assert sub.mos().shape == (10,)


class TestSynthetic:
    def test_layout(self, synthetic_db):
        m = load_manifest(synthetic_db)
        assert len(m) == 4 * 2 * 5
        assert m[0].image_path.endswith('ref00_blur_1.png')
        assert all(r.distortion_type in ('blur', 'noise') for r in m)

    def test_deterministic(self, tmp_path):
        spec = SyntheticSpec(n_refs=4, types=('noise',), levels=2, height=32, seed=11)
        a = load_manifest(SyntheticDatasetManager(str(tmp_path / 'a'), spec).create_dataset())
        b = load_manifest(SyntheticDatasetManager(str(tmp_path / 'b'), spec).create_dataset())
        np.testing.assert_array_equal(a.mos(), b.mos())
        with open(a[3].image_path, 'rb') as fa, open(b[3].image_path, 'rb') as fb:
            assert fa.read() == fb.read()

    def test_references_included(self, tmp_path):
        spec = SyntheticSpec(n_refs=4, types=('blur',), levels=1, height=32, include_references=True)
        m = load_manifest(SyntheticDatasetManager(str(tmp_path), spec).create_dataset())
        assert [r.distortion_type for r in m][:2] == ['none', 'blur']

    @pytest.mark.parametrize('kwargs', [{'n_refs': 3}, {'types': ('fog',)}, {'levels': 6}])
    def test_bad_spec(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticSpec(**kwargs)


class TestPreparation:
    def test_prepare_image(self, reference):
        prepared = prepare_image(reference, DETECTOR_CFG, MODEL_CFG, mos=4.0)
        assert prepared.erp.shape == (64, 128, 3)
        assert prepared.viewports.shape == (prepared.n_viewports, 32, 32, 3)
        assert prepared.adjacency.shape == (prepared.n_viewports,) * 2

    def test_resizes_to_working_resolution(self, reference):
        big = np.repeat(np.repeat(reference, 2, axis=0), 2, axis=1)
        assert prepare_image(big, DETECTOR_CFG, MODEL_CFG).erp.shape == (64, 128, 3)

    def test_featureless_image(self):
        flat = np.full((64, 128, 3), 50, np.uint8)
        with pytest.raises(DataError, match='flat'):
            prepare_image(flat, DETECTOR_CFG, MODEL_CFG, name='flat')
        prepared = prepare_image(flat, DETECTOR_CFG, MODEL_CFG, strict=False)
        assert prepared.n_viewports == DETECTOR_CFG.n_viewpoints

    def test_image_tensor_range(self):
        x = image_tensor(np.array([[[[0, 255, 128]]]], dtype=np.uint8))
        assert x.shape == (1, 3, 1, 1)
        assert x.flatten().tolist()[:2] == [-1.0, 1.0]

    def test_collate_builds_one_graph(self, reference):
        items = [prepare_image(reference, DETECTOR_CFG, MODEL_CFG, mos=m) for m in (1.0, 2.0)]
        batch = collate(items)
        n = sum(batch.counts)
        assert batch.viewports.shape[0] == n
        assert batch.adjacency.shape == (n, n)
        assert torch.count_nonzero(batch.adjacency[:items[0].n_viewports, items[0].n_viewports:]) == 0
        assert batch.mos.tolist() == [1.0, 2.0]


class TestDatasets:
    def test_cached(self, synthetic_db):
        dataset = OmniIQADataset(load_manifest(synthetic_db), DETECTOR_CFG, MODEL_CFG)
        assert dataset[0] is dataset[0]
        assert dataset[0].record.ref_id == 'ref00'

    def test_patches(self, synthetic_db):
        dataset = OmniIQADataset(load_manifest(synthetic_db), DETECTOR_CFG, MODEL_CFG)
        patches = PatchDataset(dataset, 32, patches_per_image=2, seed=0)
        assert len(patches) == 2 * len(dataset)
        x, mos = patches[3]
        assert x.shape == (3, 32, 32)
        assert float(mos) == pytest.approx(dataset[1].mos, rel=1e-6)
        first = patches[0][0]
        patches.set_epoch(1)
        assert not torch.equal(first, patches[0][0])

    def test_patch_too_large(self, synthetic_db):
        dataset = OmniIQADataset(load_manifest(synthetic_db), DETECTOR_CFG, MODEL_CFG)
        with pytest.raises(DataError):
            PatchDataset(dataset, 100)[0]

    def test_unreadable_image(self, tmp_path):
        bad = tmp_path / 'bad.png'
        bad.write_bytes(b'garbage')
        path = write_csv(tmp_path / 'm.csv', ','.join(MANIFEST_COLUMNS) + '\nbad.png,r,blur,1,5\n')
        dataset = OmniIQADataset(load_manifest(path), DETECTOR_CFG, MODEL_CFG)
        with pytest.raises(DataError, match='bad.png'):
            dataset[0]
