#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "cpvit/archive.hpp"
#include "cpvit/encoder.hpp"

using namespace cpvit;
namespace fs = std::filesystem;

// Fed by the exporter test fixture through CPVIT_EXPORT_DIR; one subdirectory per export.
TEST_SUITE("exporter_parity") {

TEST_CASE("exported archives reproduce the source framework") {
    const char* root = std::getenv("CPVIT_EXPORT_DIR");
    if (root == nullptr) {
        MESSAGE("CPVIT_EXPORT_DIR not set, nothing to compare");
        return;
    }
    std::size_t exports = 0;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!fs::exists(entry.path() / "manifest.json")) continue;
        ++exports;
        CAPTURE(entry.path().string());
        const auto w = load_encoder(entry.path() / "model.json");
        CHECK(encoder_to_archive(w).size() == 2 * 8 + 2);
        const auto bundle = load_inputs(entry.path() / "inputs.cpvt");
        REQUIRE(bundle.inputs.size() == bundle.reference_logits.size());
        for (std::size_t n = 0; n < bundle.inputs.size(); ++n) {
            const auto& ref = bundle.reference_logits[n];
            double scale = 1.0;
            for (double v : ref.data()) scale = std::max(scale, std::abs(v));
            CHECK(max_abs_diff(forward(w, bundle.inputs[n]).logits, ref) <= 1e-3 * scale);
        }
        if (fs::exists(entry.path() / "attention.cpvt")) {
            const auto captured = load_archive(entry.path() / "attention.cpvt");
            const auto attention = record_attention(w, bundle.inputs[0]);
            for (std::size_t l = 0; l < attention.size(); ++l) {
                CHECK(max_abs_diff(attention[l], captured.at("layer" + std::to_string(l) + ".attention")) <= 1e-4);
            }
        }
    }
    CHECK(exports > 0);
}

}
