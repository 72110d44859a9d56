"""Topic recovery from word co-occurrences via anchor words."""
from .anchors import AnchorSet, fast_anchor_words, find_anchors, random_projection
from .cooccur import Cooccurrence, build_q, load_q, save_q
from .corpus import (CorpusError, ParseError, SparseCorpus, filter_short_documents,
                     parse_uci_bag_of_words, prune_vocabulary, write_uci_bag_of_words)
from .evaluation import (EvalReport, coherence, evaluate, l1_topic_error, uniform_baseline,
                         unique_words)
from .recover import Method, TopicModel, recover_topic_model
from .simplex_solver import Divergence, SimplexProblem, SimplexSolution, exponentiated_gradient
from .synth import (DirichletPrior, GeneratorSpec, LogisticNormalPrior, block_covariance,
                    generate_corpus, inject_anchor_words)

__version__ = "0.1.0"
