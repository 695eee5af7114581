"""Model-agnostic decoding control: filters, feedback samplers, and analysis."""

__version__ = "0.1.0"

from .coder import CodeStream, decode, encode
from .distributions import (
    LogitVector,
    SampleOutcome,
    TokenDistribution,
    repetition_penalty,
    sample,
    softmax_to_distribution,
    top_k_filter,
    top_p_filter,
)
from .estimator import ExponentEstimate, estimate_zipf_exponent
from .metrics import (
    GenerationRecord,
    RepetitionReport,
    ngram_repetition,
    perplexity,
    surprise_rate,
    trailing_window_means,
)
from .mirostat import (
    FixedPolicy,
    MirostatState,
    StepTrace,
    controlled_surprise_rate,
    generate,
    mirostat_avg_step,
    mirostat_k_from_mu,
    mirostat_step,
    mirostat2_step,
)
from .models import (
    EndOfStream,
    NGramModel,
    ReplaySource,
    StdioModelClient,
    ZipfSource,
    load_token_text,
    open_replay,
    teacher_forced_surprises,
    train_ngram,
    write_replay,
    zipf_source,
)
from .zipf import (
    ApproxConstants,
    ZipfParams,
    harmonic_approx,
    harmonic_exact,
    harmonic_integral_approx,
    surprise_of_rank,
    surprise_slope,
    topk_cross_entropy_approx,
    topk_cross_entropy_exact,
    topp_cross_entropy_approx,
    topp_cross_entropy_exact,
    topp_rank,
    topp_surprise_approx,
    zipf_pmf,
    zipf_pmf_vector,
)
