import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swnet import presets
from swnet.arrivals import ArrivalModel
from swnet.model import ScheduleSet, validate_network
from swnet.policy import Policy
from swnet.sim import (
    HorizonTooShort,
    conservation_audit,
    path_from_csv,
    rescale,
    run,
    step,
)


def test_step_single_hop_clipping(ex2):
    # Q=(2,0), schedule (3,0) chosen at these weights, dA=(1,1)
    res = step(ex2, Policy.mw_alpha(1.0), [2.0, 0.0], [1.0, 1.0])
    assert np.array_equal(res.service, [3.0, 0.0])
    assert np.array_equal(res.idling, [1.0, 0.0])
    assert np.array_equal(res.q_next, [1.0, 1.0])


def test_step_tandem_routes_served_work(tandem2):
    from swnet.model import WeightFunction

    pol = Policy.backpressure(WeightFunction.power(1.0))
    # force the all-ones schedule by picking a state where it wins:
    # q=(2,1): backpressure terms (f(2)-f(1), f(1)) = (1, 1); (1,1) weighs 2
    res = step(tandem2, pol, [2.0, 1.0], [0.0, 0.0])
    assert tuple(res.service) == (1.0, 1.0)
    assert np.array_equal(res.idling, [0.0, 0.0])
    assert np.array_equal(res.q_next, [1.0, 1.0])


def test_step_tandem_idling_blocks_routing(tandem2):
    from swnet.model import WeightFunction
    pol = Policy.backpressure(WeightFunction.power(1.0))
    # q=(0,1): serving (1,1) would idle queue 1 entirely; routed amount is 0
    res = step(tandem2, pol, [0.0, 1.0], [0.0, 0.0])
    served = res.service - res.idling
    assert served[0] == 0.0
    assert res.q_next[1] == 1.0 - served[1] + served[0]


def test_run_ex2_drain_hand_case(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.deterministic([0.0, 0.0]),
        [5.0, 0.0],
        2,
        seed=0,
    )
    assert np.array_equal(path.Q, [[5, 0], [2, 0], [0, 0]])
    assert np.array_equal(path.Y[-1], [1.0, 0.0])
    assert np.array_equal(path.chosen, [0, 0])


def test_run_horizon_zero(ex2):
    path = run(ex2, Policy.mw_alpha(1.0), ArrivalModel.deterministic([0, 0]), [1.0, 2.0], 0, seed=0)
    assert path.horizon == 0
    assert np.array_equal(path.Q, [[1.0, 2.0]])


def test_run_critical_single_queue_constant():
    model = presets.single_queue()
    path = run(
        model,
        Policy.mw_alpha(1.0),
        ArrivalModel.bernoulli([1.0]),
        [3.0],
        50,
        seed=0,
    )
    assert np.all(path.Q == 3.0)


def test_run_bit_reproducible(ex2):
    kw = dict(
        model=ex2,
        policy=Policy.mw_alpha(1.0),
        arrivals=ArrivalModel.bernoulli([0.9, 0.5]),
        q0=[0.0, 0.0],
        horizon=500,
    )
    a = run(kw["model"], kw["policy"], kw["arrivals"], kw["q0"], kw["horizon"], seed=9)
    b = run(kw["model"], kw["policy"], kw["arrivals"], kw["q0"], kw["horizon"], seed=9)
    assert np.array_equal(a.Q, b.Q) and np.array_equal(a.Y, b.Y)


def test_work_conservation_slotwise(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.bernoulli([0.9, 0.5]),
        [0.0, 0.0],
        2000,
        seed=21,
    )
    dB = np.diff(path.B, axis=0)
    dY = np.diff(path.Y, axis=0)
    q_before = path.Q[:-1]
    # idling happens only when the offered service exceeds the queue content
    idle = dY > 0
    assert np.all(q_before[idle] < dB[idle])


def test_rescale_identity_at_scale_one(ex2):
    path = run(ex2, Policy.mw_alpha(1.0), ArrivalModel.deterministic([1.0, 1.0]), [0.0, 0.0], 10, seed=0)
    view = rescale(path, "fluid", 1, T=10, num=11)
    assert np.allclose(view.q, path.Q)
    assert np.allclose(view.a, path.A)


def test_rescale_deterministic_arrivals_linear(ex2):
    path = run(ex2, Policy.mw_alpha(1.0), ArrivalModel.deterministic([0.3, 0.7]), [0.0, 0.0], 1000, seed=0)
    view = rescale(path, "fluid", 100, T=10, num=21)
    assert np.allclose(view.a, np.outer(view.t, [0.3, 0.7]))


def test_rescale_diffusion_drain_time():
    model = presets.single_queue()
    r, c = 10, 2.0
    path = run(
        model,
        Policy.mw_alpha(1.0),
        ArrivalModel.deterministic([0.0]),
        [r * c],
        r * r,
        seed=0,
    )
    view = rescale(path, "diffusion", r, T=1.0, num=101)
    k = int(np.argmax(view.q[:, 0] <= 0.0))
    assert view.t[k] == pytest.approx(c / r, abs=0.02)


def test_rescale_horizon_guard(ex2):
    path = run(ex2, Policy.mw_alpha(1.0), ArrivalModel.deterministic([0, 0]), [1.0, 0.0], 10, seed=0)
    with pytest.raises(HorizonTooShort):
        rescale(path, "fluid", 10, T=2.0)


def test_audit_clean_run(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.iid_batch([2, 1]),
        [0.0, 0.0],
        3000,
        seed=4,
    )
    report = conservation_audit(path, ex2)
    assert report.ok
    assert report.max_residual <= 1e-9 * (1 + path.sup_q)


def test_audit_multihop_tandem(tandem2):
    from swnet.model import WeightFunction

    path = run(
        tandem2,
        Policy.backpressure(WeightFunction.power(1.0)),
        ArrivalModel.bernoulli([0.6, 0.0]),
        [2.0, 0.0],
        10_000,
        seed=8,
    )
    report = conservation_audit(path, tandem2)
    assert report.ok, report.violations[:3]


def test_audit_detects_corruption(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.bernoulli([0.5, 0.5]),
        [0.0, 0.0],
        100,
        seed=1,
    )
    path.Q[50, 0] += 0.5  # hand-corrupted slot
    report = conservation_audit(path, ex2, bound_pairs=0)
    assert not report.ok
    assert any(v.slot == 50 and v.check == "cumulative_identity" for v in report.violations)


def test_csv_roundtrip_audits_clean(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.bernoulli([0.9, 0.5]),
        [1.0, 0.0],
        200,
        seed=13,
    )
    text = path.to_csv()
    back = path_from_csv(text, ex2)
    assert conservation_audit(back, ex2).ok
    assert np.array_equal(back.Q, path.Q)


def test_strided_recording_keeps_identities(ex2):
    path = run(
        ex2,
        Policy.mw_alpha(1.0),
        ArrivalModel.bernoulli([0.9, 0.5]),
        [0.0, 0.0],
        5000,
        seed=2,
        record_every=13,
    )
    assert path.tau[-1] == 5000
    assert conservation_audit(path, ex2).ok


def test_stability_smoke_strictly_admissible(ex2):
    # lam=(1.5, 0.5) sits strictly inside the admissible region
    for seed in (0, 1):
        path = run(
            ex2,
            Policy.mw_alpha(1.0),
            ArrivalModel.iid_batch([3, 1]),
            [0.0, 0.0],
            100_000,
            seed=seed,
            record_every=100,
        )
        assert path.sup_q < 200.0


@settings(max_examples=30, deadline=None)
@given(
    scheds=st.lists(
        st.lists(st.integers(min_value=0, max_value=3), min_size=2, max_size=2),
        min_size=1,
        max_size=3,
    ),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_random_runs_satisfy_invariants(scheds, seed):
    model = validate_network(ScheduleSet(scheds))
    path = run(
        model,
        Policy.mw_alpha(1.0),
        ArrivalModel.iid_batch([1, 1]),
        [0.0, 0.0],
        200,
        seed=seed,
    )
    assert conservation_audit(path, model, bound_pairs=20).ok
    assert (path.Q >= 0).all()
    assert (np.diff(path.S_cum.sum(axis=1)) == 1).all()
