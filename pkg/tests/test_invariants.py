from nodal_bubbles import invariants as inv


def test_fd_check_detects_wrong_gradient():
    from nodal_bubbles import profiles as pr

    class Broken(pr.StandardBubble):
        def gradient(self, x):
            return 1.01 * super().gradient(x)

    ok, detail = inv.check_fd(Broken(5))
    assert not ok and detail["gradient"] > 1e-3


def test_individual_checks_pass():
    for fn in (inv.check_determinism, inv.check_tensor_sweeps, inv.check_lambda):
        ok, detail = fn()
        assert ok, detail
    for n in (3, 5):
        assert inv.check_kelvin(n)[0]
        assert inv.check_biradial_vs_radial(n + 2)[0]


def test_run_all_with_cached_solution(ding_23_one_node):
    results = inv.run_all(ding_solution=ding_23_one_node)
    table = inv.format_table(results)
    assert all(r.passed for r in results), table
    assert table.splitlines()[-1] == f"{len(results)}/{len(results)} checks passed"
