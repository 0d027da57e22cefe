#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace hbplate::detail {

/**
 * Runs compute(k) for k in [0, n) in fixed-size batches and feeds the results
 * to reduce(k, result) in increasing k. Only compute runs concurrently, so the
 * reduction order, and therefore the floating-point result, does not depend
 * on the thread count.
 */
template <typename Result, typename Compute, typename Reduce>
void batched_map_reduce(std::size_t n, bool parallel, Compute&& compute, Reduce&& reduce,
                        std::size_t batch_size = 1024)
{
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned threads = parallel ? hw : 1u;
    std::vector<Result> results;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        results.assign(end - begin, Result{});
        if (threads == 1 || end - begin < 2) {
            for (std::size_t k = begin; k < end; ++k) results[k - begin] = compute(k);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(threads);
            for (unsigned t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t k = begin + t; k < end; k += threads) results[k - begin] = compute(k);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& err : errors)
                if (err) std::rethrow_exception(err);
        }
        for (std::size_t k = begin; k < end; ++k) reduce(k, results[k - begin]);
    }
}

} // namespace hbplate::detail
