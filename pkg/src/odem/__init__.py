"""Online dynamic expectation maximisation for generalised filtering."""
from .filtering import OdemAbort, OdemConfig, ParamPrior, RunRecord, run_odem
from .harness import SweepGrid, SweepResult, mse, report, select_best, sweep
from .models import Family, ModelSpec, glv_model, lorenz_model, make_model
from .simulate import Dataset, NoiseSpec, simulate_dataset

__all__ = [
    "Dataset", "Family", "ModelSpec", "NoiseSpec", "OdemAbort", "OdemConfig", "ParamPrior",
    "RunRecord", "SweepGrid", "SweepResult", "glv_model", "lorenz_model", "make_model", "mse",
    "report", "run_odem", "select_best", "simulate_dataset", "sweep",
]
