#include <gtest/gtest.h>

#include <filesystem>

#include "cssloc/downstream.hpp"
#include "cssloc/persistence.hpp"
#include "support.hpp"

using namespace cssloc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cssloc_persistence_tests";
  fs::create_directories(dir);
  return dir / name;
}

io::DatasetFile small_dataset(std::size_t images_per_rp = 2) {
  io::DatasetFile ds;
  ds.map = generate_dataset(cssloc::testing::small_corridor(), images_per_rp, 10, sim::ambient_dynamics());
  ds.stats = imaging::compute_stats(ds.map.images());
  ds.meta = {{"note", "unit test"}};
  return ds;
}

// Offset of the payload: magic, u32 length, u32 header CRC, header.
std::size_t payload_offset(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  const std::uint32_t len = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return 13 + len;
}

}  // namespace

TEST(DatasetFile, RoundTripBitwise) {
  const auto ds = small_dataset();
  const auto bytes = io::encode_dataset(ds);
  const auto back = io::decode_dataset(bytes);
  EXPECT_EQ(back.map, ds.map);
  EXPECT_EQ(back.stats, ds.stats);
  EXPECT_EQ(back.meta, ds.meta);
  EXPECT_EQ(io::encode_dataset(back), bytes);
  EXPECT_EQ(bytes.size() - payload_offset(bytes), 4 * ds.map.entries.size() * 900 + 4 * ds.map.entries.size());

  const auto path = scratch("rt.cssd");
  io::write_dataset(path, ds);
  EXPECT_EQ(io::read_dataset(path).map, ds.map);
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  EXPECT_EQ(io::sniff_magic(path), "CSSD1");
}

TEST(DatasetFile, QuerySetRoundTrip) {
  io::DatasetFile ds;
  ds.map = generate_queries(cssloc::testing::small_corridor(), 2, 10, sim::ambient_dynamics());
  ds.stats = {0.1, 0.2};
  EXPECT_EQ(io::decode_dataset(io::encode_dataset(ds)).map, ds.map);
}

TEST(DatasetFile, CorruptionDetected) {
  const auto bytes = io::encode_dataset(small_dataset());
  const auto off = payload_offset(bytes);
  for (std::size_t pos : {off, off + 1234, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
    EXPECT_THROW(io::decode_dataset(bad), ChecksumError) << "byte " << pos;
  }
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(io::decode_dataset(magic), FormatError);
  try {
    io::decode_dataset(bytes.substr(0, bytes.size() - 10));
    FAIL() << "truncated payload accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), bytes.size() - 10);
  }
  EXPECT_THROW(io::decode_dataset(bytes.substr(0, 7)), FormatError);
  EXPECT_THROW(io::decode_dataset(bytes + "xx"), FormatError);
  const auto ck = io::encode_checkpoint(io::encoder_checkpoint(EncoderState<float>::random(1), {}, 0));
  EXPECT_THROW(io::decode_dataset(ck), FormatError);
}

TEST(DatasetFile, MissingFileIsIoError) {
  EXPECT_THROW(io::read_dataset(scratch("does-not-exist.cssd")), IoError);
}

TEST(Checkpoint, EncoderRoundTrip) {
  for (bool projection : {true, false}) {
    auto enc = EncoderState<float>::random(9, projection);
    enc.input_norm = {0.18, 0.19};
    const auto ck = io::encoder_checkpoint(enc, {{"tau", 0.03}}, 17);
    const auto bytes = io::encode_checkpoint(ck);
    const auto back = io::decode_checkpoint(bytes, io::encoder_architecture(projection));
    EXPECT_EQ(back.epoch, 17);
    EXPECT_EQ(back.config["tau"], 0.03);
    EXPECT_EQ(io::encoder_from_checkpoint(back), enc);
    EXPECT_EQ(io::encode_checkpoint(back), bytes);

    // manifest tiles the payload
    std::size_t cursor = 0;
    for (const auto& [name, t] : back.params) cursor += 4 * t.size();
    EXPECT_EQ(cursor, bytes.size() - payload_offset(bytes));
  }
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
  const auto bytes = io::encode_checkpoint(io::encoder_checkpoint(EncoderState<float>::random(9, true), {}, 1));
  EXPECT_THROW(io::decode_checkpoint(bytes, io::encoder_architecture(false)), ArchitectureMismatch);
  EXPECT_THROW(io::decode_checkpoint(bytes, io::predictor_architecture(false)), ArchitectureMismatch);
  const auto ck = io::decode_checkpoint(bytes);
  EXPECT_THROW(io::predictor_from_checkpoint(ck), ArchitectureMismatch);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto bytes = io::encode_checkpoint(io::encoder_checkpoint(EncoderState<float>::random(2), {}, 1));
  auto bad = bytes;
  const auto pos = payload_offset(bytes) + 77;
  bad[pos] = static_cast<char>(bad[pos] + 1);
  EXPECT_THROW(io::decode_checkpoint(bad), ChecksumError);
  EXPECT_THROW(io::decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(Checkpoint, EveryHeaderByteIsCovered) {
  const auto bytes = io::encode_checkpoint(io::encoder_checkpoint(EncoderState<float>::random(2), {{"tau", 0.03}}, 1));
  for (std::size_t pos = 0; pos < payload_offset(bytes); ++pos) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x20);
    EXPECT_THROW(io::decode_checkpoint(bad), FormatError) << "byte " << pos;
  }
  auto text = bytes;
  const auto at = text.find("\"tau\":0.03");
  ASSERT_NE(at, std::string::npos);
  text[at + 8] = '4';  // still valid JSON
  EXPECT_THROW(io::decode_checkpoint(text), ChecksumError);
}

TEST(Checkpoint, PredictorRoundTripCarriesCoordinates) {
  const auto ds = small_dataset();
  const auto map = select_density(ds.map, 0.5, 3);
  for (bool linear : {false, true}) {
    const auto pred = PredictorState::random(map.rp_count(), linear, 4);
    const auto path = scratch(linear ? "lin.cssc" : "mlp.cssc");
    io::write_checkpoint(path, io::predictor_checkpoint(pred, map, {{"density", 0.5}}));
    const auto ck = io::read_checkpoint(path, io::predictor_architecture(linear));
    EXPECT_EQ(io::predictor_from_checkpoint(ck), pred);
    const auto coords = io::predictor_radio_map(ck);
    EXPECT_EQ(coords.coords, map.coords);
    EXPECT_EQ(coords.source_rp, map.source_rp);
    EXPECT_EQ(coords.scenario_id, map.scenario_id);
  }
}

TEST(Crc32, KnownVector) { EXPECT_EQ(io::crc32("123456789"), 0xCBF43926u); }
