from .model import (ForwardOutputs, NetworkSpec, backward, check_params, forward, init_params,
                    param_shapes, predict_counts, recover_count_arrays)

__all__ = ["ForwardOutputs", "NetworkSpec", "backward", "check_params", "forward", "init_params",
           "param_shapes", "predict_counts", "recover_count_arrays"]
