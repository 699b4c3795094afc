import logging
from typing import List

import numpy as np
import scipy
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from app.core.config import setup_logging
from app.core.errors import ConfigurationError, NumericalError
from app.core.integrators import iif_coefficients
from app.core.operator_assembly import DEFAULT_SIGMA
from app.core.sparse_space import GridKind, count_dofs
from app.harness.studies import spectral_diagnostics

# Setup logging
setup_logging()
logger = logging.getLogger(__name__)

MAX_SPECTRUM_DOFS = 10**5

app = FastAPI(
    title="Sparse-Grid DG Solver API",
    description="Degree-of-freedom counts, operator spectra and IIF coefficients for sparse-grid IPDG discretizations.",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:*", "http://127.0.0.1:*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Request/Response Models
class SpaceRequest(BaseModel):
    d: int = Field(2, ge=1, le=6)
    k_poly: int = Field(1, ge=0, le=5)
    N: int = Field(3, ge=0, le=12)
    grid_kind: GridKind = GridKind.SPARSE


class DofsResponse(BaseModel):
    dofs: int


class SpectrumRequest(SpaceRequest):
    sigma: float = Field(DEFAULT_SIGMA, gt=0)


class SpectrumResponse(BaseModel):
    dofs: int
    lambda0: float
    lambda_max: float
    cond2: float


class CoefficientsRequest(BaseModel):
    r: int


class CoefficientsResponse(BaseModel):
    r: int
    coefficients: List[str]
    values: List[float]


# Endpoints
@app.get("/health")
def health_check():
    """Health check endpoint"""
    return {"status": "ok", "numpy": np.__version__, "scipy": scipy.__version__}


@app.post("/dofs", response_model=DofsResponse)
def get_dofs(request: SpaceRequest):
    """Number of degrees of freedom of a sparse or full grid space"""
    return DofsResponse(dofs=count_dofs(request.d, request.k_poly, request.N, request.grid_kind))


@app.post("/spectrum", response_model=SpectrumResponse)
def get_spectrum(request: SpectrumRequest):
    """Extremal eigenvalues of the kappa = 1 periodic operator"""
    logger.info(f"Spectrum request: {request}")
    dofs = count_dofs(request.d, request.k_poly, request.N, request.grid_kind)
    if dofs > MAX_SPECTRUM_DOFS:
        raise HTTPException(status_code=422, detail=f"{dofs} degrees of freedom exceed {MAX_SPECTRUM_DOFS}")
    try:
        result = spectral_diagnostics(request.d, request.k_poly, request.N, request.grid_kind, sigma=request.sigma)
    except ConfigurationError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalError as e:
        logger.error(f"Spectrum failed: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
    return SpectrumResponse(dofs=result.dofs, lambda0=result.lambda0, lambda_max=result.lambda_max,
                            cond2=result.cond2)


@app.post("/iif-coefficients", response_model=CoefficientsResponse)
def get_iif_coefficients(request: CoefficientsRequest):
    """Exact IIF coefficients (alpha_1, alpha_0, ..., alpha_{2-r})"""
    try:
        coeffs = iif_coefficients(request.r)
    except ConfigurationError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return CoefficientsResponse(r=request.r, coefficients=[str(c) for c in coeffs],
                                values=[float(c) for c in coeffs])


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
