# PPW Spectral Toolkit
