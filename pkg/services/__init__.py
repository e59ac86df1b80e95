"""
Services Package
Version: 1.0

Keep this file minimal; import the subpackages directly:
    services.tensor      numpy network kernels, parameters, Adam
    services.scene       factor grid, feasibility, rendering, dataset files
    services.vae         beta-VAE models, objectives, training, checkpoints
    services.metrics     disentanglement scores
    services.downstream  regressors, OOD splits, transfer scoring
    services.harness     sweeps, record files, reports
"""
