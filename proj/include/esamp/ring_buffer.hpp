#pragma once

// Fixed-capacity handoff ring between the backbone lane and the distiller
// lane. Slots hold (step, row, h1, hL-or-pending); the producer writes h1
// then hL, the consumer acknowledges with consume(). A slot is never
// overwritten while unconsumed — violations are counted and rejected, and the
// engine asserts the counter stays zero. All vectors are preallocated at
// construction; nothing allocates mid-session.

#include <atomic>
#include <cstdint>
#include <vector>

#include "esamp/numerics.hpp"

namespace esamp {

class HiddenRing {
public:
    enum SlotStage : int { empty = 0, h1_ready = 1, full = 2 };

    struct Slot {
        uint64_t step = 0;
        uint32_t row = 0;
        Vector h1, hl;
        std::atomic<int> stage{empty};

        Slot() = default;
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;
    };

    HiddenRing(std::size_t capacity, std::size_t dim);

    // claims the next slot; CapacityError (and a violation count) if the slot
    // is still unconsumed
    std::size_t push_h1(uint64_t step, uint32_t row, const Vector& h1);
    void fill_hl(std::size_t idx, const Vector& hl);
    void consume(std::size_t idx);

    const Slot& slot(std::size_t idx) const { return slots_[idx]; }
    std::size_t capacity() const { return slots_.size(); }
    std::size_t dim() const { return dim_; }
    long long violations() const { return violations_.load(std::memory_order_relaxed); }
    std::size_t max_in_flight() const { return max_in_flight_; }

private:
    std::vector<Slot> slots_;
    std::size_t dim_;
    std::size_t cursor_ = 0;
    std::size_t in_flight_ = 0;
    std::size_t max_in_flight_ = 0;
    std::atomic<long long> violations_{0};
};

} // namespace esamp
