from .abtree import TxABTree
from .hashmap import TxHashMap
from .typeaf import AfMode, TypeAfConfig, TypeAfResult, run_type_af

__all__ = ["TxABTree", "TxHashMap", "AfMode", "TypeAfConfig", "TypeAfResult", "run_type_af"]
