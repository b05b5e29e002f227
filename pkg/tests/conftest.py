import numpy as np
import pytest

from pmrisk import CityPortfolio, CopulaSpec, GhParams, paper_portfolio

# Five-city GH fits (lam, alpha, delta, beta, mu)
GH_ROWS = {
    "Bj": GhParams(lam=0.1894, alpha=2.4296, delta=0.7561, beta=-1.0516, mu=0.5075),
    "Tj": GhParams(lam=1.8041, alpha=3.3702, delta=0.0066, beta=-0.8673, mu=0.2959),
    "Cd": GhParams(lam=1.1848, alpha=6.4420, delta=0.5492, beta=-4.0233, mu=0.7318),
    "Hs": GhParams(lam=1.7675, alpha=4.8022, delta=0.4498, beta=-1.7954, mu=0.4339),
    "Xt": GhParams(lam=2.0100, alpha=3.9889, delta=0.0500, beta=-1.0875, mu=0.3041),
}

SIGMA = np.array(
    [
        [1.000, 0.710, 0.744, 0.487, 0.577],
        [0.710, 1.000, 0.549, 0.709, 0.623],
        [0.744, 0.549, 1.000, 0.382, 0.463],
        [0.487, 0.709, 0.382, 1.000, 0.729],
        [0.577, 0.623, 0.463, 0.729, 1.000],
    ]
)

NU = 11.78

CAR_ROWS = [
    # (alpha, CaR, CCaR) reference rows for the preset portfolio
    (0.05, 239.32, 315.34),
    (0.01, 352.03, 461.16),
    (0.005, 414.22, 543.20),
    (0.002, 515.27, 677.76),
    (0.001, 600.78, 791.60),
]


@pytest.fixture(scope="session")
def portfolio():
    return paper_portfolio()


@pytest.fixture(scope="session")
def single_city():
    """One-city portfolio whose EP has the closed form 1 - G(log(tau/100))."""
    return CityPortfolio(
        names=("Bj",),
        weights=np.array([1.0]),
        pm0=np.array([100.0]),
        scale=np.array([1.0]),
        marginals=(GH_ROWS["Bj"],),
        copula=CopulaSpec(family="t", sigma=np.eye(1), nu=NU),
    )
