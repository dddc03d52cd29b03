/**
 * @file common.hpp
 * @brief Shared matrix aliases, error types, seed derivation and a small
 *        parallel-for used across the library.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <initializer_list>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dnnfm
{

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr const char* kToolVersion = "0.1.0";

/// Error categories. The CLI maps each to an exit code.
enum class ErrorKind
{
    shape,        ///< dimension mismatch between arguments
    config,       ///< invalid configuration or usage
    data,         ///< non-finite or misaligned input data
    io,           ///< file could not be read or written
    numeric,      ///< iteration failed to converge / training diverged
    estimation,   ///< a linear system became numerically singular
};

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require_shape(bool ok, const std::string& what)
{
    if (!ok)
        fail(ErrorKind::shape, what);
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols)
{
    return std::to_string(rows) + "x" + std::to_string(cols);
}

// splitmix64 finalizer; used to derive independent RNG streams.
inline std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a stream seed from a base seed and a path of stream keys
/// (e.g. asset index, lambda index, epoch). Order of keys matters.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys)
{
    std::uint64_t s = mix64(base);
    for (auto k : keys)
        s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    return s;
}

/// 0 means "use available hardware parallelism".
inline unsigned resolve_threads(unsigned requested)
{
    if (requested > 0)
        return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

/**
 * Runs body(i) for i in [0, count) on up to `threads` workers. Work items
 * must be independent; results are written by index so the schedule never
 * affects the output. The first exception thrown is rethrown after join.
 */
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body)
{
    threads = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(std::max<std::size_t>(count, 1)));
    if (threads <= 1)
    {
        for (std::size_t i = 0; i < count; ++i)
            body(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;)
        {
            std::size_t i = next.fetch_add(1);
            if (i >= count)
                return;
            try
            {
                body(i);
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back(worker);
    for (auto& th : pool)
        th.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

inline bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

inline Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

}  // namespace dnnfm
