// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace rbfssm {

// Bit e of kMcEdgeTable[c] is set when edge e of a cube with corner
// configuration c crosses the isosurface.  kMcTriTable[c] lists triangle
// corners as edge indices, terminated by -1.
extern const int kMcEdgeTable[256];
extern const int kMcTriTable[256][16];

}  // namespace rbfssm
