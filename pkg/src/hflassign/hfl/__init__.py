from hflassign.hfl.bounds import (
    BoundInputs,
    InsufficientHistory,
    bound_inputs,
    compute_P_n,
    edge_statistics,
    estimate_lipschitz,
    jmax,
    lemma2_bound,
)
from hflassign.hfl.model import (
    LabeledDataset,
    Model,
    ModelKind,
    evaluate,
    gradient,
    init_model,
    loss,
    num_weights,
    per_class_gradients,
    predict_proba,
)
from hflassign.hfl.simulate import (
    CentralRun,
    HflRun,
    LogRow,
    SimConfig,
    TrainLog,
    aggregate,
    edge_vs_virtual_deviation,
    load_weights,
    run_centralized_twin,
    run_hfl,
    save_weights,
    verify_lemma1,
    weights_hash,
)
