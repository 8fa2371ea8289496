"""Wavefront sweep: decomposed runs against the monolithic kernel."""
import numpy as np
import pytest

from weaves.errors import DecompositionError
from weaves.sweep import (
    SweepParams,
    digest,
    external_source,
    run_sweep,
    slab_bounds,
    sweep_reference,
)

GRID = (8, 4, 4)


@pytest.fixture(scope="module")
def reference():
    return digest(sweep_reference(GRID, 2, 42))


class TestSweep:
    @pytest.mark.parametrize("n_vms", [1, 2, 3, 4, 8])
    def test_digest_independent_of_decomposition(self, reference, n_vms):
        result = run_sweep(SweepParams(GRID, n_vms, 2, 42))
        assert result.digest == reference
        assert result.messages == result.expected_messages
        assert result.values == result.messages * 4 * 4

    def test_slab_digests(self):
        result = run_sweep(SweepParams(GRID, 2, 2, 42))
        phi = sweep_reference(GRID, 2, 42)
        assert result.digests == [digest(phi[:4]), digest(phi[4:])]
        assert np.array_equal(result.phi, phi)

    def test_zero_sweeps(self):
        result = run_sweep(SweepParams(GRID, 2, 0, 42))
        assert result.messages == 0
        assert not result.phi.any()

    def test_seed_matters(self, reference):
        assert run_sweep(SweepParams(GRID, 2, 2, 7)).digest != reference

    def test_emulator_counts_messages(self):
        result = run_sweep(SweepParams(GRID, 4, 1, 42))
        t = result.handle.tapestry
        assert t.read_cell(t.resolve("V0", "emulator", "sent")) == result.messages == 6

    @pytest.mark.parametrize("params", [
        SweepParams(GRID, 0),
        SweepParams(GRID, 9),
        SweepParams((0, 4, 4), 1),
    ])
    def test_bad_decomposition(self, params):
        with pytest.raises(DecompositionError):
            run_sweep(params)


class TestKernel:
    def test_slabs(self):
        assert [slab_bounds(10, 3, r) for r in range(3)] == [(0, 3), (3, 6), (6, 10)]

    def test_source_slices_agree(self):
        whole = external_source(0, 6, 3, 2, 5)
        assert np.array_equal(whole[2:5], external_source(2, 5, 3, 2, 5))
        assert ((whole >= 0.0) & (whole < 1.0)).all()
