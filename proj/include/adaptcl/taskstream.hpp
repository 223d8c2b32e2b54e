#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adaptcl/error.hpp"

namespace adaptcl {

struct ImageGeometry {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;

    std::size_t numel() const { return channels * height * width; }
    bool operator==(const ImageGeometry&) const = default;
};

struct Sample {
    std::vector<float> pixels; // raw values, standardized at model-input time
    int label = 0;
};

// Ordered class-incremental task sequence with pairwise-disjoint class sets.
// Data access goes through audited accessors: while task t is current, train
// data of any other task is a violation, and test data is only reachable for
// tasks up to t (cumulative evaluation). The audit log records every access
// so a run can prove task isolation after the fact.
class TaskStream {
public:
    struct Task {
        std::vector<int> class_ids; // ascending
        std::vector<Sample> train;
        std::vector<Sample> test;
    };

    struct AuditRecord {
        std::size_t task = 0;
        bool train_data = false;
        std::size_t current = 0;
        bool violation = false;
    };

    TaskStream(ImageGeometry geometry, std::vector<Task> tasks)
        : geometry_(geometry), tasks_(std::move(tasks)) {
        if (tasks_.empty()) {
            throw ContractError("task stream must contain at least one task");
        }
        for (std::size_t a = 0; a < tasks_.size(); ++a) {
            for (std::size_t b = a + 1; b < tasks_.size(); ++b) {
                for (int c : tasks_[a].class_ids) {
                    for (int c2 : tasks_[b].class_ids) {
                        if (c == c2) {
                            throw ContractError("tasks " + std::to_string(a) + " and " +
                                                std::to_string(b) + " share class " +
                                                std::to_string(c));
                        }
                    }
                }
            }
        }
    }

    const ImageGeometry& geometry() const { return geometry_; }
    std::size_t num_tasks() const { return tasks_.size(); }

    const std::vector<int>& class_ids(std::size_t t) const { return at(t).class_ids; }

    std::size_t train_size(std::size_t t) const { return at(t).train.size(); }
    std::size_t test_size(std::size_t t) const { return at(t).test.size(); }

    void begin_task(std::size_t t) {
        at(t);
        current_ = t;
    }
    std::size_t current_task() const { return current_; }

    const std::vector<Sample>& train_samples(std::size_t t) {
        const bool ok = t == current_;
        audit_.push_back({t, true, current_, !ok});
        return at(t).train;
    }

    const std::vector<Sample>& test_samples(std::size_t t) {
        const bool ok = t <= current_;
        audit_.push_back({t, false, current_, !ok});
        return at(t).test;
    }

    const std::vector<AuditRecord>& audit_log() const { return audit_; }

    std::size_t violation_count() const {
        std::size_t n = 0;
        for (const auto& r : audit_) n += r.violation ? 1 : 0;
        return n;
    }

    // Reordered view of the same tasks (used to probe order sensitivity).
    TaskStream permuted(const std::vector<std::size_t>& order) const {
        if (order.size() != tasks_.size()) {
            throw ContractError("permutation length does not match task count");
        }
        std::vector<Task> reordered;
        for (std::size_t idx : order) {
            reordered.push_back(at(idx));
        }
        return TaskStream(geometry_, std::move(reordered));
    }

private:
    const Task& at(std::size_t t) const {
        if (t >= tasks_.size()) {
            throw RangeError("task index " + std::to_string(t) + " out of range, stream has " +
                             std::to_string(tasks_.size()) + " tasks");
        }
        return tasks_[t];
    }

    ImageGeometry geometry_;
    std::vector<Task> tasks_;
    std::size_t current_ = 0;
    std::vector<AuditRecord> audit_;
};

} // namespace adaptcl
