#include "quietroom/error.hpp"

namespace quietroom {

int exit_code_for(const Error& error) noexcept {
    switch (error.category()) {
        case Error::Category::Config: return 2;
        case Error::Category::Data: return 3;
        case Error::Category::Numerical: return 4;
        case Error::Category::Crypto: return 5;
    }
    return 1;
}

}  // namespace quietroom
