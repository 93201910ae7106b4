#include "mfc/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace mfc {

int default_jobs() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int count, int jobs, const std::function<void(int, int)>& body) {
    if (count <= 0) return;
    jobs = std::clamp(jobs, 1, count);
    if (jobs == 1 || count < 64) {
        body(0, count);
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    int chunk = (count + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
        int b = j * chunk, e = std::min(count, b + chunk);
        if (b >= e) break;
        workers.emplace_back([&, j, b, e] {
            try {
                body(b, e);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace mfc
