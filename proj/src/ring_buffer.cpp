#include "esamp/ring_buffer.hpp"

#include "esamp/errors.hpp"

namespace esamp {

HiddenRing::HiddenRing(std::size_t capacity, std::size_t dim)
    : slots_(capacity), dim_(dim) {
    if (capacity == 0) throw ConfigError("ring capacity must be positive");
    if (dim == 0) throw ConfigError("ring dim must be positive");
    for (auto& s : slots_) {
        s.h1.assign(dim, 0.0);
        s.hl.assign(dim, 0.0);
    }
}

std::size_t HiddenRing::push_h1(uint64_t step, uint32_t row, const Vector& h1) {
    if (h1.size() != dim_) throw DimensionError("ring push: h1 dim mismatch");
    const std::size_t idx = cursor_;
    Slot& s = slots_[idx];
    if (s.stage.load(std::memory_order_acquire) != empty) {
        violations_.fetch_add(1, std::memory_order_relaxed);
        throw CapacityError("ring push: slot " + std::to_string(idx) +
                            " still unconsumed");
    }
    s.step = step;
    s.row = row;
    s.h1 = h1;
    s.stage.store(h1_ready, std::memory_order_release);
    cursor_ = (cursor_ + 1) % slots_.size();
    ++in_flight_;
    if (in_flight_ > max_in_flight_) max_in_flight_ = in_flight_;
    return idx;
}

void HiddenRing::fill_hl(std::size_t idx, const Vector& hl) {
    if (idx >= slots_.size()) throw InputError("ring fill: bad slot index");
    if (hl.size() != dim_) throw DimensionError("ring fill: hl dim mismatch");
    Slot& s = slots_[idx];
    if (s.stage.load(std::memory_order_acquire) != h1_ready) {
        violations_.fetch_add(1, std::memory_order_relaxed);
        throw ContractError("ring fill: slot not in h1_ready stage");
    }
    s.hl = hl;
    s.stage.store(full, std::memory_order_release);
}

void HiddenRing::consume(std::size_t idx) {
    if (idx >= slots_.size()) throw InputError("ring consume: bad slot index");
    Slot& s = slots_[idx];
    if (s.stage.load(std::memory_order_acquire) != full) {
        violations_.fetch_add(1, std::memory_order_relaxed);
        throw ContractError("ring consume: slot not full");
    }
    s.stage.store(empty, std::memory_order_release);
    --in_flight_;
}

} // namespace esamp
