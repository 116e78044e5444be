"""Restricted spatial regression: models, samplers and exact posterior oracles."""
from .analytics import (PosteriorSummary, QuadratureMoments, beta_marginal_density, closed_form_ns,
                        conditional_sigma_mean, ns_posterior_sigma_mean, quadrature_moments, summarize)
from .bases import DesignMatrix, SpatialBasis, complement_basis, count_hh_basis, count_rhz_basis, hh_basis
from .errors import RsrError
from .graph import AdjacencyGraph, laplacian_eigen, load_graph, read_edge_list, sample_icar
from .iwls import IwlsFit, iwls_poisson
from .model import ModelSpec, PriorConfig, make_custom, make_model, validate_conditions
from .samplers import ChainConfig, ChainOutput, batch_means, gibbs_gaussian, mh_poisson, run_chain_diagnostics

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph", "ChainConfig", "ChainOutput", "DesignMatrix", "IwlsFit", "ModelSpec", "PosteriorSummary",
    "PriorConfig", "QuadratureMoments", "RsrError", "SpatialBasis", "batch_means", "beta_marginal_density",
    "closed_form_ns", "complement_basis", "conditional_sigma_mean", "count_hh_basis", "count_rhz_basis",
    "gibbs_gaussian", "hh_basis", "iwls_poisson", "laplacian_eigen", "load_graph", "make_custom", "make_model",
    "mh_poisson", "ns_posterior_sigma_mean", "quadrature_moments", "read_edge_list", "run_chain_diagnostics",
    "sample_icar", "summarize", "validate_conditions",
]
