#include "doctest.h"

#include <cstdint>
#include <set>
#include <vector>

#include "meud/dataset.hpp"
#include "meud/errors.hpp"

using namespace meud;

namespace {

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

// 2 images of 2x2 pixels plus matching labels, laid out by hand against the
// IDX byte format.
std::vector<std::uint8_t> idx_image_fixture() {
    std::vector<std::uint8_t> bytes;
    push_be32(bytes, 0x00000803);
    push_be32(bytes, 2);  // images
    push_be32(bytes, 2);  // rows
    push_be32(bytes, 2);  // cols
    for (std::uint8_t px : {0, 51, 102, 153, 204, 255, 128, 64}) bytes.push_back(px);
    return bytes;
}

std::vector<std::uint8_t> idx_label_fixture() {
    std::vector<std::uint8_t> bytes;
    push_be32(bytes, 0x00000801);
    push_be32(bytes, 2);
    bytes.push_back(1);
    bytes.push_back(0);
    return bytes;
}

std::vector<std::uint8_t> cifar_fixture() {
    std::vector<std::uint8_t> bytes;
    bytes.push_back(3);
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>(i % 256));
    bytes.push_back(7);
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>((i * 2 + 1) % 256));
    return bytes;
}

}  // namespace

TEST_CASE("parse_idx: hand-built fixture decodes bit-exactly") {
    const LabeledDataset ds = parse_idx(idx_image_fixture(), idx_label_fixture());
    REQUIRE(ds.samples.rows() == 2);
    REQUIRE(ds.samples.cols() == 4);
    const double expected0[4] = {0.0, 51.0 / 255.0, 102.0 / 255.0, 153.0 / 255.0};
    const double expected1[4] = {204.0 / 255.0, 1.0, 128.0 / 255.0, 64.0 / 255.0};
    for (int j = 0; j < 4; ++j) {
        CHECK(ds.samples(0, j) == expected0[j]);
        CHECK(ds.samples(1, j) == expected1[j]);
    }
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.num_classes == 2);
}

TEST_CASE("parse_idx: scaling endpoints") {
    const LabeledDataset ds = parse_idx(idx_image_fixture(), idx_label_fixture());
    CHECK(ds.samples(0, 0) == 0.0);   // byte 0
    CHECK(ds.samples(1, 1) == 1.0);   // byte 255
}

TEST_CASE("parse_idx: distinct failure modes") {
    auto images = idx_image_fixture();
    auto labels = idx_label_fixture();

    SUBCASE("truncated payload") {
        images.pop_back();
        try {
            parse_idx(images, labels);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::Truncated);
        }
    }
    SUBCASE("bad image magic") {
        images[3] = 0x07;
        try {
            parse_idx(images, labels);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadMagic);
        }
    }
    SUBCASE("count mismatch") {
        labels[7] = 3;  // claims 3 labels
        labels.push_back(2);
        try {
            parse_idx(images, labels);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::CountMismatch);
        }
    }
}

TEST_CASE("parse_idx: label offset shifts EMNIST-style labels") {
    auto labels = idx_label_fixture();
    labels[8] = 2;
    labels[9] = 1;
    const LabeledDataset ds = parse_idx(idx_image_fixture(), labels, 1);
    CHECK(ds.labels == std::vector<int>{1, 0});

    labels[9] = 0;  // offset would push it below zero
    try {
        parse_idx(idx_image_fixture(), labels, 1);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.kind == ParseError::Kind::BadLabel);
    }
}

TEST_CASE("parse_cifar10_bin: two-record fixture") {
    const LabeledDataset ds = parse_cifar10_bin(cifar_fixture());
    REQUIRE(ds.samples.rows() == 2);
    REQUIRE(ds.samples.cols() == 3072);
    CHECK(ds.labels == std::vector<int>{3, 7});
    CHECK(ds.num_classes == 10);
    CHECK(ds.samples(0, 5) == 5.0 / 255.0);
    CHECK(ds.samples(1, 10) == 21.0 / 255.0);
}

TEST_CASE("parse_cifar10_bin: empty stream gives an empty dataset") {
    const LabeledDataset ds = parse_cifar10_bin({});
    CHECK(ds.samples.rows() == 0);
    CHECK(ds.num_classes == 10);
}

TEST_CASE("parse_cifar10_bin: failure modes") {
    auto bytes = cifar_fixture();
    SUBCASE("bad record size") {
        bytes.pop_back();
        try {
            parse_cifar10_bin(bytes);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadRecordSize);
        }
    }
    SUBCASE("invalid label byte") {
        bytes[0] = 11;
        try {
            parse_cifar10_bin(bytes);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadLabel);
        }
    }
}

TEST_CASE("embed_labels: positive one-hot lands on the true label") {
    LabeledDataset ds = synth_blobs(10, 3, 16, 0.1, 5);
    const EncodedMatrix enc = embed_labels(ds, Polarity::Positive, 77);
    for (std::size_t i = 0; i < enc.size(); ++i) {
        for (int j = 0; j < 10; ++j) {
            CHECK(enc.data(i, j) == (j == ds.labels[i] ? 1.0 : 0.0));
        }
    }
    // positive embedding is seed-independent
    const EncodedMatrix enc2 = embed_labels(ds, Polarity::Positive, 12345);
    CHECK(enc.data == enc2.data);
}

TEST_CASE("embed_labels: negative one-hot never lands on the true label") {
    LabeledDataset ds = synth_blobs(10, 2, 12, 0.05, 9);
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const EncodedMatrix enc = embed_labels(ds, Polarity::Negative, seed);
        for (std::size_t i = 0; i < enc.size(); ++i) {
            CHECK(enc.data(i, ds.labels[i]) == 0.0);
            double sum = 0.0;
            for (int j = 0; j < 10; ++j) sum += enc.data(i, j);
            CHECK(sum == 1.0);
        }
    }
    // deterministic given the seed
    CHECK(embed_labels(ds, Polarity::Negative, 3).data ==
          embed_labels(ds, Polarity::Negative, 3).data);
}

TEST_CASE("embed_labels: rejects impossible setups") {
    LabeledDataset one_class;
    one_class.samples = Matrix(2, 4, 0.5);
    one_class.labels = {0, 0};
    one_class.num_classes = 1;
    CHECK_THROWS_AS(embed_labels(one_class, Polarity::Negative, 1), ConfigError);

    LabeledDataset narrow;
    narrow.samples = Matrix(2, 3, 0.5);
    narrow.labels = {0, 4};
    narrow.num_classes = 5;
    CHECK_THROWS_AS(embed_labels(narrow, Polarity::Positive, 1), DimensionError);
}

TEST_CASE("embed_labels: features beyond the label block are untouched") {
    const LabeledDataset ds = synth_blobs(4, 5, 9, 0.2, 21);
    const EncodedMatrix pos = embed_labels(ds, Polarity::Positive, 0);
    const EncodedMatrix neg = embed_labels(ds, Polarity::Negative, 8);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 4; j < 9; ++j) {
            CHECK(pos.data(i, j) == ds.samples(i, j));
            CHECK(neg.data(i, j) == ds.samples(i, j));
        }
    }
}

TEST_CASE("build_training_matrix: halves, order and one-hot property") {
    const LabeledDataset ds = synth_blobs(2, 2, 6, 0.1, 3);  // m = 4
    const EncodedMatrix enc = build_training_matrix(ds, 11);
    REQUIRE(enc.size() == 4);
    CHECK(enc.polarity[0] == Polarity::Positive);
    CHECK(enc.polarity[1] == Polarity::Positive);
    CHECK(enc.polarity[2] == Polarity::Negative);
    CHECK(enc.polarity[3] == Polarity::Negative);
    // positive half retains original order: labels 0,0 then sources 1,1
    CHECK(enc.source_labels == std::vector<int>{0, 0, 1, 1});
    for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 2; ++j) sum += enc.data(i, j);
        CHECK(sum == 1.0);
    }

    // odd m: ceil(m/2) positives
    const LabeledDataset odd = synth_blobs(5, 1, 8, 0.1, 4);  // m = 5
    const EncodedMatrix enc_odd = build_training_matrix(odd, 1);
    int positives = 0;
    for (auto p : enc_odd.polarity) positives += p == Polarity::Positive ? 1 : 0;
    CHECK(positives == 3);

    LabeledDataset tiny;
    tiny.samples = Matrix(1, 4, 0.1);
    tiny.labels = {0};
    tiny.num_classes = 2;
    CHECK_THROWS_AS(build_training_matrix(tiny, 0), ConfigError);
}

TEST_CASE("build_training_matrix: mirrored mode re-encodes the leading samples") {
    const LabeledDataset ds = synth_blobs(2, 3, 6, 0.0, 8);  // m = 6
    const EncodedMatrix enc = build_training_matrix(ds, 5, true);
    // negative rows carry the same source labels as the positive half
    CHECK(enc.source_labels[3] == enc.source_labels[0]);
    CHECK(enc.source_labels[4] == enc.source_labels[1]);
    CHECK(enc.source_labels[5] == enc.source_labels[2]);
}

TEST_CASE("synth_blobs: degenerate spread and label layout") {
    const LabeledDataset ds = synth_blobs(3, 4, 8, 0.0, 42);
    REQUIRE(ds.size() == 12);
    for (int c = 0; c < 3; ++c) {
        for (int s = 1; s < 4; ++s) {
            for (std::size_t j = 0; j < 8; ++j) {
                CHECK(ds.samples(c * 4 + s, j) == ds.samples(c * 4, j));
            }
        }
    }
    std::vector<int> expected;
    for (int c = 0; c < 3; ++c)
        for (int s = 0; s < 4; ++s) expected.push_back(c);
    CHECK(ds.labels == expected);

    const LabeledDataset other = synth_blobs(3, 4, 8, 0.0, 43);
    CHECK(other.labels == ds.labels);
    CHECK(other.samples != ds.samples);
}

TEST_CASE("synth_digits: MNIST-shaped, bounded, deterministic") {
    const LabeledDataset ds = synth_digits(40, 17);
    REQUIRE(ds.samples.cols() == 784);
    CHECK(ds.num_classes == 10);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.labels[i] == static_cast<int>(i % 10));
    for (double v : ds.samples.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(synth_digits(40, 17).samples == ds.samples);
    CHECK(synth_digits(40, 18).samples != ds.samples);
}

TEST_CASE("loader outputs satisfy dataset invariants") {
    for (const LabeledDataset& ds :
         {parse_idx(idx_image_fixture(), idx_label_fixture()), parse_cifar10_bin(cifar_fixture()),
          synth_blobs(5, 6, 10, 0.3, 2), synth_digits(30, 3)}) {
        CHECK(ds.samples.rows() == ds.labels.size());
        for (double v : ds.samples.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (int l : ds.labels) {
            CHECK(l >= 0);
            CHECK(l < ds.num_classes);
        }
    }
}

TEST_CASE("shuffle and slice keep rows intact") {
    const LabeledDataset ds = synth_blobs(4, 5, 7, 0.2, 10);
    const LabeledDataset shuffled = shuffle_dataset(ds, 3);
    REQUIRE(shuffled.size() == ds.size());
    // every original row still present: compare sorted label multisets and row sums
    std::multiset<double> before, after;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            a += ds.samples(i, j);
            b += shuffled.samples(i, j);
        }
        before.insert(a);
        after.insert(b);
    }
    CHECK(before == after);

    const LabeledDataset part = slice_dataset(ds, 5, 10);
    CHECK(part.size() == 10);
    CHECK(part.labels.front() == ds.labels[5]);
    CHECK_THROWS_AS(slice_dataset(ds, 15, 10), DimensionError);
}
