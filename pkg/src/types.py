from typing import List, Optional, TypedDict


class RunSummary(TypedDict):
    kind: str
    seed: int
    n_clients: int
    num_clusters: int
    alpha_star: Optional[float]
    rounds: int
    final_mean_accuracy: float
    bytes_up: int
    bytes_down: int
    warnings: List[str]
