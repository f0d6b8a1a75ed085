#include "driftbench/trainers.hpp"

namespace driftbench {

const std::vector<std::pair<std::string, Method>>& method_names() {
    static const std::vector<std::pair<std::string, Method>> names = {
        {"vanilla", Method::Vanilla},
        {"er", Method::ER},
        {"agem", Method::AGEM},
        {"er_mir", Method::ERMir},
        {"er_mir_max", Method::ERMirMax},
        {"offline", Method::Offline},
        {"offline_one_pass", Method::OfflineOnePass},
    };
    return names;
}

Method method_from_string(const std::string& name) {
    for (const auto& [n, m] : method_names())
        if (n == name) return m;
    std::string valid;
    for (const auto& [n, m] : method_names()) {
        (void)m;
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw ConfigError("unknown method '" + name + "'; valid methods: " + valid);
}

std::string method_to_string(Method method) {
    for (const auto& [n, m] : method_names())
        if (m == method) return n;
    return "?";
}

bool method_uses_memory(Method method) {
    switch (method) {
        case Method::ER:
        case Method::AGEM:
        case Method::ERMir:
        case Method::ERMirMax:
            return true;
        default:
            return false;
    }
}

}  // namespace driftbench
