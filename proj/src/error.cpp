#include "dash/error.hpp"

namespace dash {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Data: return "data";
        case ErrorKind::Compute: return "compute";
        case ErrorKind::NotFound: return "not_found";
        case ErrorKind::Conflict: return "conflict";
    }
    return "unknown";
}

}  // namespace dash
