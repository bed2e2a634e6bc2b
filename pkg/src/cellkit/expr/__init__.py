from .io import (
    load_annotations,
    load_dataset,
    load_matrix,
    save_annotations,
    save_dataset,
    save_matrix,
)
from .matrix import CellAnnotations, Dataset, ExpressionMatrix, GeneVocabulary
from .preprocess import (
    QcReport,
    align_to_vocabulary,
    apply_ortholog_map,
    assign_splits,
    build_vocabulary,
    drop_rare_labels,
    hvg_scores,
    normalize_log1p,
    qc_filter,
    select_hvg,
    split_dataset,
)
