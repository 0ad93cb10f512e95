"""Hand-built voltage/flow scenarios with their metrics worked out by hand.

Band is (0.94, 1.06) pu. Each entry: vm (T, N), flows (T, L), ratings,
converged flags, and the expected C_V, C_C, H_V, AVDI %, MVDI %, excluded.
"""

SCENARIOS = {
    "all_inside": dict(
        vm=[[1.0, 1.0], [0.99, 1.01]], flow=[[50.0], [60.0]], ratings=[100.0],
        expect=dict(C_V=0, C_C=0, H_V=0, AVDI=0.0, MVDI=0.0)),
    "one_bus_low_three_slots": dict(
        vm=[[0.93, 1.0], [0.93, 1.0], [0.93, 1.0]], flow=[[0.0]] * 3, ratings=[100.0],
        expect=dict(C_V=3, C_C=0, H_V=1, AVDI=100 * 0.03 / 6, MVDI=1.0)),
    "exactly_on_lower_bound": dict(
        vm=[[0.94, 1.0]], flow=[[0.0]], ratings=[100.0],
        expect=dict(C_V=1, C_C=0, H_V=1, AVDI=0.0, MVDI=0.0)),
    "two_buses_high": dict(
        vm=[[1.08, 1.08, 1.0], [1.0, 1.0, 1.0]], flow=[[0.0], [0.0]], ratings=[100.0],
        expect=dict(C_V=2, C_C=0, H_V=2, AVDI=100 * 0.04 / 6, MVDI=2.0)),
    "line_overload": dict(
        vm=[[1.0]], flow=[[120.0, 80.0]], ratings=[100.0, 100.0],
        expect=dict(C_V=0, C_C=1, H_V=0, AVDI=0.0, MVDI=0.0)),
    "unlimited_line": dict(
        vm=[[1.0]], flow=[[500.0]], ratings=[0.0],
        expect=dict(C_V=0, C_C=0, H_V=0, AVDI=0.0, MVDI=0.0)),
    "flow_at_rating": dict(
        vm=[[1.0]], flow=[[100.0]], ratings=[100.0],
        expect=dict(C_V=0, C_C=0, H_V=0, AVDI=0.0, MVDI=0.0)),
    "mixed_slots": dict(
        vm=[[0.90, 1.07], [1.0, 0.95]], flow=[[101.0], [99.0]], ratings=[100.0],
        expect=dict(C_V=2, C_C=1, H_V=2, AVDI=100 * 0.05 / 4, MVDI=4.0)),
    "nonconverged_slot_excluded": dict(
        vm=[[0.93, 1.0], [0.5, 0.5]], flow=[[0.0], [900.0]], ratings=[100.0],
        converged=[True, False],
        expect=dict(C_V=1, C_C=0, H_V=1, AVDI=100 * 0.01 / 2, MVDI=1.0, excluded=[1])),
    "worst_hour": dict(
        vm=[[0.92, 1.0, 1.0], [0.93, 1.07, 1.10], [1.0, 1.0, 1.0]],
        flow=[[150.0, 10.0], [150.0, 150.0], [0.0, 0.0]], ratings=[100.0, 100.0],
        expect=dict(C_V=4, C_C=3, H_V=3, AVDI=100 * 0.08 / 9, MVDI=4.0)),
}
