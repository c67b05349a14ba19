#include "objective.hpp"

namespace digpt {

Paradigm parse_paradigm(const std::string& s) {
    if (s == "digpt") return Paradigm::digpt;
    if (s == "fd") return Paradigm::fd;
    if (s == "mim") return Paradigm::mim;
    throw ConfigError("paradigm must be one of digpt|fd|mim, got '" + s + "'");
}

const char* paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::digpt: return "digpt";
        case Paradigm::fd: return "fd";
        case Paradigm::mim: return "mim";
    }
    return "?";
}

}  // namespace digpt
