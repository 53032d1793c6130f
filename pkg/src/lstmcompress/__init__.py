"""Train small LSTM language models and compress their weight matrices.

Three compressors share one budget knob: truncated SVD, semi-NMF
(nonnegative right factor), and magnitude pruning with the keep count
aligned to the parameter cost of a rank-r pair. Factorized matrices are
applied as two thin products, never re-densified, which is where the
inference speedup comes from.
"""

from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .compress import (METHODS, SCOPES, TARGETS, CompressionReport,
                       CompressionSpec, SlotReport, compress_model)
from .corpus import (EOS, UNK, BatchedCorpus, Vocabulary, batchify,
                     build_vocab, sample_text, tokenize)
from .errors import (AlreadyCompressed, CorpusTooShort, DegenerateCompression,
                     DivergedError, EmptyCorpus, FormatError, InvalidBudget,
                     InvalidMatrix, InvalidRank, InvalidShape,
                     LstmCompressError, ShapeError, VocabError)
from .factorize import (FactorizedMatrix, PrunedMatrix, SemiNmfOptions,
                        prune_magnitude, rank_to_keep_count, reconstruct,
                        semi_nmf, truncated_svd)
from .linalg import (Matrix, NormStats, SvdResult, as_matrix, derive_seed,
                     norm_stats, prng_matrix, svd_full)
from .metrics import (CSV_COLUMNS, CSV_COLUMNS_NORMS, BenchResult, EvalResult,
                      ReportRow, bench_inference, efficiency, norm_sweep,
                      perplexity, rows_to_csv)
from .model import (GATES, DenseSlot, FactorizedSlot, LmConfig, LstmLayer,
                    LstmLmModel, PrunedSlot, cell_forward, count_flops,
                    cross_entropy, lm_forward)
from .train import (TrainerConfig, bptt_step, clip_gradients,
                    compute_gradients, finetune, sgd_step, train_model)

__version__ = "0.1.0"
