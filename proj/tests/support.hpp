#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "ecgfuse/ingest.hpp"
#include "ecgfuse/rng.hpp"

namespace ecgfuse::testing {

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ecgfuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Random 12-lead record; values span many magnitudes so text round-trips are exercised.
inline EcgRecord random_record(Rng& rng, const std::string& id, std::size_t n, int rate) {
    EcgRecord rec;
    rec.record_id = id;
    rec.sampling_rate = rate;
    for (auto& lead : rec.leads) {
        lead.resize(n);
        for (auto& v : lead) v = rng.normal() * std::pow(10.0, rng.uniform(-4.0, 1.0));
    }
    return rec;
}

}  // namespace ecgfuse::testing
