import numpy as np
import pytest
import scipy.integrate
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from churnattn.exceptions import DegenerateDataError
from churnattn.stats import (
    AnovaTable,
    f_critical,
    f_upper_tail,
    one_tailed_welch,
    regularized_incomplete_beta,
    t_upper_tail,
    two_way_anova,
)


# -- incomplete beta -----------------------------------------------------------

@given(
    st.floats(min_value=0.01, max_value=0.99),
    st.floats(min_value=0.5, max_value=40.0),
    st.floats(min_value=0.5, max_value=40.0),
)
@settings(max_examples=150, deadline=None)
def test_incomplete_beta_symmetry(x, a, b):
    left = regularized_incomplete_beta(x, a, b)
    right = regularized_incomplete_beta(1.0 - x, b, a)
    assert abs(left + right - 1.0) < 1e-12


def test_incomplete_beta_against_scipy():
    for x in (0.05, 0.3, 0.5, 0.72, 0.99):
        for a in (0.5, 1.0, 5.0, 16.0):
            for b in (0.5, 2.5, 20.0):
                mine = regularized_incomplete_beta(x, a, b)
                ref = scipy.special.betainc(a, b, x)
                assert abs(mine - ref) < 1e-12


# -- F distribution -------------------------------------------------------------

def test_f_upper_tail_at_zero_is_one():
    assert f_upper_tail(0.0, 1, 32) == 1.0


def test_f_upper_tail_against_scipy():
    for x in (0.2, 1.0, 2.9011, 4.1491, 10.0):
        for df in ((1, 32), (3, 32), (5, 14)):
            assert abs(f_upper_tail(x, *df) - scipy.stats.f.sf(x, *df)) < 1e-12


def test_f_critical_reference_values():
    assert abs(f_critical(0.05, 1, 32) - 4.1491) < 1e-3
    assert abs(f_critical(0.05, 3, 32) - 2.9011) < 1e-3


def test_f_critical_inverse_identity():
    for alpha in (0.05, 0.01, 0.2):
        for df in ((1, 32), (3, 32)):
            x = f_critical(alpha, *df)
            assert abs(f_upper_tail(x, *df) - alpha) < 1e-6


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        f_upper_tail(1.0, 0, 3)
    with pytest.raises(ValueError):
        f_critical(1.5, 2, 3)


# -- Welch test ------------------------------------------------------------------

def test_identical_samples_give_half():
    t, p = one_tailed_welch([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert t == 0.0 and p == 0.5


def test_extreme_separation():
    _, p = one_tailed_welch([10.0, 10.1, 9.9], [0.0, 0.1, -0.1], direction="greater")
    assert p < 0.001


def test_welch_matches_quadrature_oracle():
    a = [4.1, 3.8, 4.4, 4.0, 4.3]
    b = [3.2, 3.9, 3.1, 3.6, 3.4]
    t, p = one_tailed_welch(a, b, direction="greater")
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    se2 = va / 5 + vb / 5
    df = se2**2 / ((va / 5) ** 2 / 4 + (vb / 5) ** 2 / 4)

    def t_density(x):
        from math import gamma, sqrt, pi
        return (
            gamma((df + 1) / 2)
            / (sqrt(df * pi) * gamma(df / 2))
            * (1 + x * x / df) ** (-(df + 1) / 2)
        )

    tail, _ = scipy.integrate.quad(t_density, t, np.inf)
    assert abs(p - tail) < 1e-6


def test_welch_zero_variance_rejected():
    with pytest.raises(DegenerateDataError):
        one_tailed_welch([1.0, 1.0, 1.0], [2.0, 2.0])


def test_welch_direction_validation():
    with pytest.raises(ValueError):
        one_tailed_welch([1.0, 2.0], [1.0, 2.0], direction="sideways")


def test_welch_needs_two_observations():
    with pytest.raises(ValueError):
        one_tailed_welch([1.0], [1.0, 2.0])


# -- two-way ANOVA ----------------------------------------------------------------

def definitional_anova_oracle(obs: np.ndarray):
    """Sums of squares straight from the textbook definitions, scalar loops."""
    a, b, r = obs.shape
    grand = obs.mean()
    ss_a = ss_b = ss_ab = ss_e = ss_t = 0.0
    for i in range(a):
        ss_a += b * r * (obs[i].mean() - grand) ** 2
    for j in range(b):
        ss_b += a * r * (obs[:, j].mean() - grand) ** 2
    for i in range(a):
        for j in range(b):
            cell = obs[i, j].mean()
            ss_ab += r * (cell - obs[i].mean() - obs[:, j].mean() + grand) ** 2
            for k in range(r):
                ss_e += (obs[i, j, k] - cell) ** 2
                ss_t += (obs[i, j, k] - grand) ** 2
    return ss_a, ss_b, ss_ab, ss_e, ss_t


def test_df_column_for_2x4x5_design():
    rng = np.random.default_rng(0)
    table = two_way_anova(rng.normal(size=(2, 4, 5)))
    assert tuple(row.df for row in table.rows()) == (1, 3, 3, 32, 39)


def test_worked_2x2x2_example():
    obs = np.array([[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]])
    t = two_way_anova(obs)
    assert abs(t.factor_a.ss - 32.0) < 1e-12
    assert abs(t.factor_b.ss - 8.0) < 1e-12
    assert abs(t.interaction.ss - 0.0) < 1e-12
    assert abs(t.error.ss - 2.0) < 1e-12
    assert abs(t.factor_a.f - 64.0) < 1e-12


def test_constant_observations_rejected():
    with pytest.raises(DegenerateDataError):
        two_way_anova(np.full((2, 2, 2), 3.0))


def test_unbalanced_input_rejected():
    with pytest.raises(ValueError):
        two_way_anova([[[1.0, 2.0], [3.0]], [[5.0, 6.0], [7.0, 8.0]]])


def test_matches_definitional_oracle_on_50_random_designs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = int(rng.integers(2, 5))
        b = int(rng.integers(2, 5))
        r = int(rng.integers(2, 6))
        obs = rng.normal(loc=rng.normal(), scale=rng.uniform(0.5, 3.0), size=(a, b, r))
        table = two_way_anova(obs)
        oracle = definitional_anova_oracle(obs)
        mine = (table.factor_a.ss, table.factor_b.ss, table.interaction.ss, table.error.ss, table.total.ss)
        for got, want in zip(mine, oracle):
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_ss_additivity_and_shift_invariance():
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(3, 4, 4))
    t1 = two_way_anova(obs)
    parts = t1.factor_a.ss + t1.factor_b.ss + t1.interaction.ss + t1.error.ss
    assert abs(parts - t1.total.ss) < 1e-9 * max(1.0, t1.total.ss)
    t2 = two_way_anova(obs + 1234.5)
    for r1, r2 in zip(t1.rows()[:3], t2.rows()[:3]):
        assert abs(r1.ss - r2.ss) < 1e-9 * max(1.0, abs(r1.ss))
        assert abs(r1.f - r2.f) < 1e-9 * max(1.0, abs(r1.f))
        assert abs(r1.p - r2.p) < 1e-9


def test_anova_pvalues_match_scipy():
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(2, 4, 5)) + rng.normal(size=(2, 1, 1))
    table = two_way_anova(obs)
    for row in (table.factor_a, table.factor_b, table.interaction):
        assert abs(row.p - scipy.stats.f.sf(row.f, row.df, table.error.df)) < 1e-12


def test_anova_csv_layout():
    rng = np.random.default_rng(4)
    text = two_way_anova(rng.normal(size=(2, 4, 5))).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "Source,SS,df,MS,F,P-value,F crit"
    assert [ln.split(",")[0] for ln in lines[1:]] == [
        "Factor A",
        "Factor B",
        "Interaction",
        "Error",
        "Total",
    ]
    # Error and Total rows carry no F / p / F crit
    assert lines[4].endswith(",,,")
    assert lines[5].split(",")[3] == ""
