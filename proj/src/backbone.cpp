#include "esamp/backbone.hpp"

#include "esamp/errors.hpp"

namespace esamp {

void Backbone::check_token(int token) const {
    if (token < 0 || std::size_t(token) >= spec().vocab)
        throw InputError("backbone: token id out of range");
}

} // namespace esamp
