import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Tuple, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def func_wrapper(args: Tuple[Callable[..., Any], int, Any]) -> Tuple[int, Any]:
    """
    args: tuple(func, index, item)
    Returns (index, result)
    """
    func, index, item = args
    try:
        result = func(item)
    except Exception as e:
        log.error("Failed to run %s(item #%d)", getattr(func, "__name__", func), index)
        log.exception(e)
        raise

    return index, result


def map_ordered(
    func: Callable[[T], R],
    items: Iterable[T],
    processes: int = 2,
) -> List[R]:
    """Apply `func` to every item on a thread pool and return the results in input
    order, whatever order the workers finish in."""
    args_list = [(func, index, item) for index, item in enumerate(items)]
    if processes <= 1 or len(args_list) <= 1:
        results = [func_wrapper(args) for args in args_list]
    else:
        with ThreadPoolExecutor(processes) as pool:
            results = list(pool.map(func_wrapper, args_list))

    return [result for _, result in sorted(results, key=lambda x: x[0])]
