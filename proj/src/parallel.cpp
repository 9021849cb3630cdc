#include "mpose/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mpose {

int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("MPOSE_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

namespace {
thread_local bool inside_pool = false;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const int workers = worker_count();
    if (n == 0) return;
    if (workers == 1 || inside_pool || n < 2) {
        fn(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(workers, n);
    const std::size_t base = n / chunks;
    const std::size_t extra = n % chunks;
    std::vector<std::thread> threads;
    threads.reserve(chunks);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < chunks; ++i) {
        std::size_t len = base + (i < extra ? 1 : 0);
        std::size_t end = begin + len;
        threads.emplace_back([&fn, begin, end] {
            inside_pool = true;
            fn(begin, end);
            inside_pool = false;
        });
        begin = end;
    }
    for (auto& t : threads) t.join();
}

} // namespace mpose
