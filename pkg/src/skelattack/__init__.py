"""Skeletonization-narrowed black-box adversarial attacks on LaTeX OCR."""

from .attack_engine import (AggregateRow, AttackConfig, AttackTrace,
                            BatchResult, aggregate, run_attack, run_batch)
from .image_core import (BinaryMask, GrayImage, SetValue, Toggle,
                         apply_perturbation, binarize, load_png, psnr,
                         save_png)
from .loss_metrics import (MetricsRow, char_accuracy, cosine_similarity,
                           success, tfidf_pair, tokenize)
from .optimizers import CmaEs, CmaEsCore, RandomSearch, Tpe, make_optimizer
from .region_select import (BoundingBox, EmptySearchSpaceError, Mode,
                            SearchSpace, build_search_space, canonical_order,
                            detect_character_boxes, skeletonize)
from .victim_oracle import (BudgetExhausted, ExternalProcessOracle,
                            GlyphAtlas, OcrOutput, OracleConfig,
                            OracleUnavailable, ToyTemplateOracle,
                            builtin_atlas, load_atlas, make_oracle,
                            save_atlas, toy_recognize)

__version__ = "0.1.0"
