// Writes synthetic CSV records (with sidecars) for the CLI smoke test.
// usage: synth_records <dir> <per_class> <seed>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "ecgfuse/synthetic.hpp"

int main(int argc, char** argv) {
    if (argc != 4) {
        std::cerr << "usage: synth_records <dir> <per_class> <seed>\n";
        return 1;
    }
    const std::filesystem::path dir = argv[1];
    std::filesystem::create_directories(dir);
    const auto per_class = static_cast<std::size_t>(std::strtoull(argv[2], nullptr, 10));
    const auto seed = static_cast<std::uint64_t>(std::strtoull(argv[3], nullptr, 10));
    for (const auto& rec : ecgfuse::synthetic_dataset(per_class, seed)) ecgfuse::write_csv_record(rec, dir);
    return 0;
}
