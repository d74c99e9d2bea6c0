"""Minimal numpy neural-network engine - layers with manual backward passes, networks, Adam and gradient checks"""
