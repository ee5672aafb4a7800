#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "mtc/model_io.hpp"
#include "mtc/nas.hpp"
#include "mtc/quant.hpp"
#include "mtc/synth.hpp"

using namespace mtc;

namespace {

std::vector<SessionRecord> corpus_records(int classes, int sessions, std::uint64_t seed) {
    auto corpus = generate_synthetic_corpus(
        {.n_classes = classes, .sessions_per_class = sessions}, seed);
    std::vector<SessionRecord> records;
    for (std::size_t cls = 0; cls < corpus.captures.size(); ++cls)
        for (auto& r : ingest_capture(corpus.captures[cls], static_cast<std::uint16_t>(cls)))
            records.push_back(r);
    return records;
}

Model<float> warmed_model(std::uint64_t seed) {
    auto genome = default_initial_parent(3);
    genome.blocks.push_back({12, 3, 1, Padding::same, PoolKind::avg, 2, 0.15});
    auto model = instantiate<float>(genome, seed);
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Tensor<float> warm({4, 1, kInputLen});
    for (auto& v : warm.v) v = dist(rng);
    model.forward(warm, RunMode::train);  // move BN running stats off init
    return model;
}

// Rewrites the CRC trailer after in-place edits, so checks beyond the CRC can
// be exercised.
void refresh_crc(std::vector<std::uint8_t>& bytes) {
    auto body = std::span<const std::uint8_t>(bytes.data(), bytes.size() - 4);
    std::uint32_t c = crc32(body);
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(c >> (8 * i));
}

}  // namespace

TEST_CASE("float model: serialize/deserialize round trip is bit exact") {
    auto model = warmed_model(31);
    auto bytes = serialize_model(model);

    auto loaded = deserialize_model(bytes);
    REQUIRE(std::holds_alternative<Model<float>>(loaded));
    auto& back = std::get<Model<float>>(loaded);

    REQUIRE(back.layers.size() == model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        CHECK(back.layers[i].index() == model.layers[i].index());
        REQUIRE(back.params[i].size() == model.params[i].size());
        for (std::size_t j = 0; j < model.params[i].size(); ++j) {
            CHECK(back.params[i][j].shape == model.params[i][j].shape);
            CHECK(back.params[i][j].v == model.params[i][j].v);
        }
    }
    // running stats survive, so infer outputs are bitwise identical
    std::mt19937 rng(8);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Tensor<float> x({3, 1, kInputLen});
    for (auto& v : x.v) v = dist(rng);
    CHECK(model.forward(x, RunMode::infer).v == back.forward(x, RunMode::infer).v);
    // serialization is a pure function of the model
    CHECK(serialize_model(back) == bytes);
}

TEST_CASE("quant model: round trip preserves every prediction") {
    auto records = corpus_records(3, 8, 5);
    auto model = instantiate<float>(default_initial_parent(3), 17);
    auto folded = fold_batchnorm(model);
    auto qm = quantize_model(folded, calibrate(folded, records));

    auto bytes = serialize_model(qm);
    auto loaded = deserialize_model(bytes);
    REQUIRE(std::holds_alternative<QuantModel>(loaded));
    auto& back = std::get<QuantModel>(loaded);

    CHECK(back.n_classes == qm.n_classes);
    REQUIRE(back.ops.size() == qm.ops.size());
    for (const auto& r : records) CHECK(quantized_forward(back, r) == quantized_forward(qm, r));
    CHECK(serialize_model(back) == bytes);
}

TEST_CASE("model file: tamper and header checks") {
    auto bytes = serialize_model(warmed_model(2));

    SECTION("flipped payload byte") {
        auto bad = bytes;
        bad[bad.size() / 2] ^= 0x01;
        CHECK_THROWS_AS(deserialize_model(bad), ChecksumMismatch);
    }
    SECTION("truncation") {
        auto bad = bytes;
        bad.resize(bad.size() - 9);
        CHECK_THROWS_AS(deserialize_model(bad), ChecksumMismatch);
    }
    SECTION("bad magic") {
        auto bad = bytes;
        bad[1] = 'X';
        CHECK_THROWS_AS(deserialize_model(bad), BadMagic);
    }
    SECTION("unsupported version") {
        auto bad = bytes;
        bad[4] = 99;  // version u16 LE low byte
        refresh_crc(bad);
        CHECK_THROWS_AS(deserialize_model(bad), VersionUnsupported);
    }
    SECTION("unknown precision flag") {
        auto bad = bytes;
        bad[6] = 7;
        refresh_crc(bad);
        CHECK_THROWS_AS(deserialize_model(bad), MalformedHeader);
    }
}

TEST_CASE("model file: save/load through the filesystem") {
    auto model = warmed_model(5);
    auto dir = std::filesystem::temp_directory_path();
    auto fpath = (dir / "mtc_test_model_f32.bin").string();
    auto qpath = (dir / "mtc_test_model_int8.bin").string();

    std::size_t fsize = save_model(model, fpath);
    CHECK(fsize == std::filesystem::file_size(fpath));
    CHECK(std::holds_alternative<Model<float>>(load_model(fpath)));

    auto records = corpus_records(3, 6, 9);
    auto folded = fold_batchnorm(model);
    auto qm = quantize_model(folded, calibrate(folded, records));
    std::size_t qsize = save_model(qm, qpath);
    CHECK(qsize == std::filesystem::file_size(qpath));
    CHECK(std::holds_alternative<QuantModel>(load_model(qpath)));

    // int8 weights shrink the file roughly 4x; demand at least 2x
    CHECK(qsize * 2 < fsize);

    std::filesystem::remove(fpath);
    std::filesystem::remove(qpath);
}

TEST_CASE("model file: float size accounts for every stored scalar") {
    auto model = warmed_model(13);
    std::size_t scalars = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        for (const auto& t : model.params[i]) scalars += t.v.size();
        if (std::holds_alternative<BatchNormSpec>(model.layers[i]))
            scalars += model.bn_stats[i].running_mean.v.size() +
                       model.bn_stats[i].running_var.v.size();
    }
    auto bytes = serialize_model(model);
    // header + layer table is small; the payload dominates
    CHECK(bytes.size() >= 4 * scalars);
    CHECK(bytes.size() <= 4 * scalars + 512);
}

TEST_CASE("cost report: csv totals match the cost model") {
    auto g = paper_architecture();
    auto r = cost_report(g);
    auto csv = emit_cost_report(g, ReportFormat::csv);
    CHECK(csv.rfind("layer,params,out_elements,flops\n", 0) == 0);
    std::ostringstream total;
    total << "total," << r.params << ',' << r.max_tensor << ',' << r.flops << '\n';
    CHECK(csv.find(total.str()) != std::string::npos);
    // one line per layer + header + total
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) ==
          r.per_layer.size() + 2);
}

TEST_CASE("cost report: text includes both precision projections") {
    auto g = paper_architecture();
    auto r = cost_report(g);
    auto text = emit_cost_report(g, ReportFormat::text);
    CHECK(text.find("int8 flash " + std::to_string(r.params_flash_bytes_int8())) !=
          std::string::npos);
    CHECK(text.find("f32 flash " + std::to_string(r.params_flash_bytes_f32())) !=
          std::string::npos);
    CHECK(text.find("int8 ram " + std::to_string(r.max_tensor_ram_bytes_int8())) !=
          std::string::npos);
    CHECK(r.params_flash_bytes_f32() == 4 * r.params);
    CHECK(r.max_tensor_ram_bytes_int8() == r.max_tensor);
}
