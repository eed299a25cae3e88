// Runs every acceptance criterion and prints one line per criterion.

#include <iostream>

#include "soldfl/acceptance.hpp"

int main() {
    const auto results = soldfl::acceptance::run_all(std::cout);
    for (const auto& r : results)
        if (!r.passed) return 1;
    return 0;
}
