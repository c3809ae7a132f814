# SPDX-License-Identifier: Apache-2.0
"""Knowledge distillation toolkit: losses, CKA, recipes and reporting.

Training runs through the ``kdkit`` command-line tool; this module exposes the
torch-free core for scripting and analysis.
"""

from ._core import (
    KdError,
    __version__,
    bce_loss,
    bkl_loss,
    builtin_recipe,
    builtin_recipe_names,
    cc_loss,
    ce_loss,
    cka_linear,
    describe_recipe,
    dist_loss,
    dkd_loss,
    exit_code_for_kind,
    gap_table_csv,
    hint_loss,
    hsic_unbiased,
    inter_class_relation,
    intra_class_relation,
    kl_soft_loss,
    lr_at,
    merge_overrides,
    parse_job,
    rkd_loss,
    softmax_temperature,
    stratified_subset,
    vanilla_kd_loss,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
