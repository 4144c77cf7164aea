// Writes the bundled synthetic fixtures to disk: the raw session tree
// consumed by `singfuse prepare` and the 20-record multitask overfit
// set (WAVs + JSONL manifest).

#include <iostream>
#include <string>

#include "singfuse/fixture.hpp"

int main(int argc, char ** argv) {
    std::string out = argc > 1 ? argv[1] : "fixture";
    try {
        singfuse::write_prepare_fixture(out + "/raw");
        singfuse::write_overfit_fixture(out + "/overfit");
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "fixture written under " << out << "\n";
    return 0;
}
