"""tablescan: table location and cell-structure extraction from page images."""

from .evaluation import (AdjacencyRelation, AreaMetrics, GroundTruthTable, GTCell,
                         adjacency_relations, area_precision_recall, icdar_score,
                         parse_groundtruth, write_groundtruth)
from .image_prep import (ScaleMap, Strip, load_image, pad_vertical, resize_to_width,
                         save_image, slice_strips, to_grayscale)
from .line_detect import (GradientField, Orientation, RealLine, build_data_mask,
                          find_real_lines, maxpool_3x3_stride1, second_derivatives)
from .ocr_output import TableModel, emit_csv, extract_text, parse_csv
from .pipeline import PipelineConfig, detect_regions, extract_table, process_page
from .region_detect import Region, ensemble_union
from .structure_lines import (FinalLines, InferredLineSet, QualityProfile,
                              adaptive_inferred_lines, finalize_lines, group_inferred,
                              quality_profile, sma_select, suppress_near_real)
from .synthetic import SyntheticPage, SyntheticTable, generate_page, generate_synthetic

__version__ = "0.1.0"
