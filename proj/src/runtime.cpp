#include "v2lab/runtime.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

namespace v2lab {

int thread_count() {
    const char* env = std::getenv("V2LAB_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    const int n = std::atoi(env);
    return n <= 1 ? 1 : n;
}

void parallel_chunks(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) return;
    const int workers = std::min(thread_count(), n);
    if (workers == 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int begin = w * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace v2lab
