#pragma once

namespace testutil {

// The scalp layout as printed, row by row (0 = no sensor). Sensor 125 is not
// printed; it sits at (4,3), the cell that mirrors sensor 195 at (4,17).
inline const int kPrinted[20][21] = {
    {  0,   0,   0,   0,   0,   0,   0,   0,   0,   0, 121,   0,   0,   0,   0,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0,   0,   0, 122,  90,  89, 120, 152,   0,   0,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0,   0, 123,  91,  62,  61,  88, 119, 151,   0,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0, 124,  92,  63,  38,  37,  60,  87, 118, 150,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0, 177, 153,  93,  64,  39,  20,  19,  36,  59,  86, 117, 149, 176, 195,   0,   0,   0},
    {229, 212, 178, 154, 126,  94,  65,  40,  21,   6,   5,  18,  35,  58,  85, 116, 148, 175, 194, 228, 248},
    {230, 213, 179, 155, 127,  95,  66,  41,  22,   7,   4,  17,  34,  57,  84, 115, 147, 174, 193, 227, 247},
    {  0, 231, 196, 156, 128,  96,  67,  42,  23,   8,   3,  16,  33,  56,  83, 114, 146, 173, 211, 246,   0},
    {  0, 232, 197, 157, 129,  97,  68,  43,  24,   9,   2,  15,  32,  55,  82, 113, 145, 172, 210, 245,   0},
    {  0, 233, 198, 158, 130,  98,  69,  44,  25,  10,   1,  14,  31,  54,  81, 112, 144, 171, 209, 244,   0},
    {  0,   0, 214, 180, 131,  99,  70,  45,  26,  11,  12,  13,  30,  53,  80, 111, 143, 192, 226,   0,   0},
    {  0,   0,   0,   0, 159, 132, 100,  71,  46,  27,  28,  29,  52,  79, 110, 142, 170,   0,   0,   0,   0},
    {  0,   0,   0, 181, 160, 133, 101,  72,  47,  48,  49,  50,  51,  78, 109, 141, 169, 191,   0,   0,   0},
    {  0,   0, 215, 199, 182, 161, 134, 102,  73,  74,  75,  76,  77, 108, 140, 168, 190, 208, 225,   0,   0},
    {  0,   0, 234, 216, 200, 183, 162, 135, 103, 104, 105, 106, 107, 139, 167, 189, 207, 224, 243,   0,   0},
    {  0,   0,   0,   0, 235, 217, 201, 184, 163, 136, 137, 138, 166, 188, 206, 223, 242,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0, 236, 218, 202, 185, 164, 165, 187, 205, 222, 241,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0,   0,   0, 219, 203, 186, 204, 221,   0,   0,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0,   0,   0,   0, 237, 220, 240,   0,   0,   0,   0,   0,   0,   0,   0,   0},
    {  0,   0,   0,   0,   0,   0,   0,   0,   0,   0, 238, 239,   0,   0,   0,   0,   0,   0,   0,   0,   0}
};

}  // namespace testutil
