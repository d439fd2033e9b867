#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "support.hpp"

using namespace fetalbet;
namespace fs = std::filesystem;

namespace {

Volume ramp_volume(const Dims3& dims, const Spacing3& spacing) {
  Volume v = Volume::create(dims, spacing);
  for (std::size_t i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<float>(i % 97) * 0.5f;
  return v;
}

void write_raw(const fs::path& path, NiftiHeader h, const std::vector<float>& data) {
  h.datatype = nifti_type::float32;
  h.bitpix = 32;
  const auto bytes = detail::encode_nifti(h, data.data(), data.size() * sizeof(float));
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(VolumeIo, HeaderSpacingPassthroughAndSliceAxis) {
  const auto dir = fbtest::temp_dir("vio_spacing");
  const Volume v = ramp_volume({64, 64, 10}, {1.0, 1.0, 2.0});
  save_volume(v, (dir / "a.nii").string());
  const Volume r = load_volume((dir / "a.nii").string());
  EXPECT_EQ(r.dims, (Dims3{64, 64, 10}));
  EXPECT_EQ(r.spacing, (Spacing3{1.0, 1.0, 2.0}));
  EXPECT_EQ(r.slice_axis, 2);
  EXPECT_EQ(r.voxels, v.voxels);

  const Volume w = ramp_volume({16, 16, 4}, {0.9375, 0.9375, 3.0});
  save_volume(w, (dir / "b.nii.gz").string());
  const Volume s = load_volume((dir / "b.nii.gz").string());
  EXPECT_EQ(s.spacing[0], 0.9375);
  EXPECT_EQ(s.spacing[2], 3.0);
  EXPECT_EQ(load_volume((dir / "b.nii.gz").string(), 0).slice_axis, 0);
}

TEST(VolumeIo, RejectsTwoDimensionalData) {
  const auto dir = fbtest::temp_dir("vio_2d");
  NiftiHeader h = make_nifti_header({8, 8, 1}, {1, 1, 1});
  h.dim[0] = 2;
  write_raw(dir / "flat.nii", h, std::vector<float>(64, 1.0f));
  EXPECT_THROW(load_volume((dir / "flat.nii").string()), FormatError);
}

TEST(VolumeIo, NaNVoxelsNameTheFile) {
  const auto dir = fbtest::temp_dir("vio_nan");
  std::vector<float> data(8 * 8 * 2, 1.0f);
  data[5] = std::numeric_limits<float>::quiet_NaN();
  write_raw(dir / "nan.nii", make_nifti_header({8, 8, 2}, {1, 1, 1}), data);
  try {
    load_volume((dir / "nan.nii").string());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("nan.nii"), std::string::npos);
  }
}

TEST(VolumeIo, MissingFileIsIoError) {
  EXPECT_THROW(load_volume("/nonexistent/volume.nii.gz"), IoError);
}

TEST(VolumeIo, ScaleSlopeApplied) {
  const auto dir = fbtest::temp_dir("vio_slope");
  NiftiHeader h = make_nifti_header({4, 4, 2}, {1, 1, 1});
  h.scl_slope = 2.0f;
  h.scl_inter = 1.0f;
  write_raw(dir / "s.nii", h, std::vector<float>(32, 3.0f));
  for (float v : load_volume((dir / "s.nii").string()).voxels) EXPECT_EQ(v, 7.0f);
}

TEST(VolumeIo, BigEndianFilesAreSwapped) {
  const auto dir = fbtest::temp_dir("vio_be");
  NiftiHeader h = make_nifti_header({2, 2, 2}, {1.5, 1.5, 4.0});
  h.datatype = nifti_type::int16;
  h.bitpix = 16;
  std::vector<std::int16_t> data{1, 2, 3, 4, 5, 6, 7, 300};
  for (auto& v : data) detail::byteswap(v);
  detail::swap_header(h);
  auto bytes = detail::encode_nifti(h, data.data(), data.size() * 2);
  // encode_nifti wrote the little-endian constants; restore the swapped ones.
  std::memcpy(bytes.data(), &h, sizeof(h));
  const std::int32_t sizeof_be = [] {
    std::int32_t s = 348;
    detail::byteswap(s);
    return s;
  }();
  std::memcpy(bytes.data(), &sizeof_be, 4);
  float off = 352.0f;
  detail::byteswap(off);
  std::memcpy(bytes.data() + offsetof(NiftiHeader, vox_offset), &off, 4);
  std::memcpy(bytes.data() + offsetof(NiftiHeader, magic), "n+1\0", 4);
  std::ofstream(dir / "be.nii", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  const Volume v = load_volume((dir / "be.nii").string());
  EXPECT_EQ(v.spacing[2], 4.0);
  EXPECT_EQ(v.voxels.back(), 300.0f);
  EXPECT_EQ(v.voxels.front(), 1.0f);
}

TEST(VolumeIo, FourDimensionalFilesSplit) {
  const auto dir = fbtest::temp_dir("vio_4d");
  NiftiHeader h = make_nifti_header({4, 4, 2}, {2, 2, 3});
  h.dim[0] = 4;
  h.dim[4] = 3;
  std::vector<float> data(4 * 4 * 2 * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i / 32);
  write_raw(dir / "ts.nii.gz", h, data);
  const auto vols = load_volumes((dir / "ts.nii.gz").string());
  ASSERT_EQ(vols.size(), 3u);
  EXPECT_EQ(vols[2].voxels.front(), 2.0f);
  EXPECT_THROW(load_volume((dir / "ts.nii.gz").string()), FormatError);
}

TEST(SaveMask, RoundTripIsBitExact) {
  const auto dir = fbtest::temp_dir("vio_mask");
  const auto sv = fbtest::disk_volume(32, 32, 5, {0.8, 0.8, 3.0}, 4);
  save_mask(sv.mask, sv.volume, (dir / "m.nii.gz").string());
  const MaskVolume back = load_mask((dir / "m.nii.gz").string());
  EXPECT_EQ(back.labels, sv.mask.labels);
  EXPECT_EQ(back.dims, sv.volume.dims);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(back.spacing[a], sv.volume.spacing[a], 1e-6);
}

TEST(SaveMask, AllZeroMaskIsLegal) {
  const auto dir = fbtest::temp_dir("vio_zero");
  const Volume ref = ramp_volume({8, 8, 3}, {1, 1, 1});
  save_mask(MaskVolume::like(ref), ref, (dir / "z.nii").string());
  for (auto v : load_mask((dir / "z.nii").string()).labels) EXPECT_EQ(v, 0);
}

TEST(SaveMask, ShapeMismatchIsContractError) {
  const Volume ref = ramp_volume({16, 16, 39}, {1, 1, 1});
  const Volume other = ramp_volume({16, 16, 40}, {1, 1, 1});
  EXPECT_THROW(save_mask(MaskVolume::like(other), ref, "/tmp/never.nii"), ContractError);
}

TEST(SaveMask, WriteFailureIsIoError) {
  const Volume ref = ramp_volume({4, 4, 2}, {1, 1, 1});
  EXPECT_THROW(save_mask(MaskVolume::like(ref), ref, "/nonexistent/dir/m.nii"), IoError);
}

TEST(LoadMask, NonBinaryRejected) {
  const auto dir = fbtest::temp_dir("vio_nonbin");
  Volume v = ramp_volume({4, 4, 2}, {1, 1, 1});
  save_volume(v, (dir / "nb.nii").string());
  EXPECT_THROW(load_mask((dir / "nb.nii").string()), ValidationError);
}

TEST(Slices, SplitCountAndReassembly) {
  const Volume v = ramp_volume({20, 12, 7}, {1, 1, 2});
  const auto slices = iterate_slices(v);
  ASSERT_EQ(slices.size(), 7u);
  EXPECT_EQ(slices[0].pixels.rows(), 20u);
  EXPECT_EQ(slices[0].pixels.cols(), 12u);
  std::vector<Image> imgs;
  for (const auto& s : slices) imgs.push_back(s.pixels);
  EXPECT_EQ(stack_slices(imgs, v.dims, v.slice_axis), v.voxels);
  for (std::size_t i = 0; i < slices.size(); ++i) EXPECT_EQ(slices[i].provenance.slice_index, i);
}

TEST(Slices, OtherAxesAndSingleSlice) {
  Volume v = ramp_volume({5, 6, 1}, {1, 1, 1});
  EXPECT_EQ(iterate_slices(v).size(), 1u);
  for (int axis = 0; axis < 3; ++axis) {
    Volume w = ramp_volume({5, 6, 7}, {1, 1, 1});
    w.slice_axis = axis;
    const auto s = iterate_slices(w);
    EXPECT_EQ(s.size(), w.dims[static_cast<std::size_t>(axis)]);
    std::vector<Image> imgs;
    for (const auto& x : s) imgs.push_back(x.pixels);
    EXPECT_EQ(stack_slices(imgs, w.dims, axis), w.voxels);
  }
}

TEST(Slices, DefaultAxisIsLowestResolution) {
  EXPECT_EQ(default_slice_axis({1.0, 1.0, 2.0}), 2);
  EXPECT_EQ(default_slice_axis({4.0, 1.0, 1.0}), 0);
  EXPECT_EQ(default_slice_axis({1.0, 1.0, 1.0}), 2);
}
